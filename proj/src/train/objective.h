#pragma once

#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "scm/model.h"
#include "train/data.h"

namespace dscm::train {

struct KlWeights {
  double z0 = 1.0;
  double z1 = 1.0;
  double z2 = 1.0;
};

struct ElboResult {
  torch::Tensor loss;  // weighted negative ELBO, batch mean; carries the graph
  // Batch means: "log_likelihood", "kl_z0", "kl_z1", "kl_z2", "nll_<var>",
  // "loss" (weighted) and "elbo" (all weights 1, higher is better).
  std::map<std::string, double> components;
};

// Negative ELBO of the joint model on one batch. Integer-valued covariates
// get U[0,1) noise on their own density when `dequantize` is set; parent
// inputs always use cell midpoints. Throws kTrainingDivergence on a
// non-finite loss, listing the components.
ElboResult elbo(const scm::DeepScm& model, const TrainingData& batch, const KlWeights& weights,
                torch::Generator& generator, bool dequantize = true);

// Scales gradients in place so their global L2 norm is <= max_norm. Returns
// the norm before clipping. Non-finite gradients throw kTrainingDivergence.
double clip_gradient_norm(const std::vector<torch::Tensor>& parameters, double max_norm);

// Observed-scale parent columns, mapped to mechanism inputs: [B, P] float64.
torch::Tensor parent_matrix(const GraphSpec& spec, const VariableSpec& v, const TrainingData& batch);

}  // namespace dscm::train
