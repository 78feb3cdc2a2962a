#pragma once

#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "graph/causal_graph.h"
#include "phantom/phantom.h"

namespace dscm::train {

// Column store of observed records. Covariates are float64 on the observed
// scale; images float32 [N, 1, H, W] (undefined for covariate-only data).
struct TrainingData {
  std::vector<std::string> ids;
  std::map<std::string, torch::Tensor> covariates;
  torch::Tensor images;

  int64_t size() const { return static_cast<int64_t>(ids.size()); }
  bool has_images() const { return images.defined(); }
  ValueMap record(int64_t i) const;
  std::vector<ValueMap> records() const;
  TrainingData subset(const torch::Tensor& index) const;
  TrainingData range(int64_t begin, int64_t end) const;

  static TrainingData from_phantoms(const std::vector<phantom::PhantomRecord>& records, bool with_images = true);
};

}  // namespace dscm::train
