#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "flows/mechanism.h"
#include "graph/causal_graph.h"
#include "vae/vae.h"

namespace dscm::scm {

using BaseMap = std::map<std::string, flows::BaseDistribution>;

// Fits one base distribution per scalar variable from observed records.
// Dequantized variables are fit on cell midpoints.
BaseMap fit_bases(const GraphSpec& spec, const std::vector<ValueMap>& records);

// The trainable SCM: covariate mechanisms (float64) plus the image VAE
// (float32), bound into a CausalGraph that shares the same objects.
class DeepScm {
 public:
  DeepScm(GraphSpec spec, BaseMap bases, std::optional<vae::VaeConfig> vae_config);

  const GraphSpec& spec() const { return spec_; }
  const CausalGraph& graph() const { return graph_; }
  const BaseMap& bases() const { return bases_; }
  bool has_image() const { return static_cast<bool>(vae_); }
  const vae::VaeConfig& vae_config() const;

  // Scalar variables in topological order.
  const std::vector<std::string>& covariates() const { return covariates_; }
  flows::CovariateMechanism& covariate(const std::string& name) const;
  vae::ImageVae vae() const { return vae_; }
  const vae::VaeImageMechanism* image_mechanism() const { return image_.get(); }

  // Every trainable tensor, keyed "flow.<var>.<param>" or "vae.<param>".
  std::vector<std::pair<std::string, torch::Tensor>> named_parameters() const;
  std::vector<torch::Tensor> parameters() const;
  int64_t parameter_count() const;

  void reset_flows_to_identity();
  void train(bool on);

  nlohmann::json info() const;

 private:
  GraphSpec spec_;
  BaseMap bases_;
  std::vector<std::string> covariates_;
  std::map<std::string, std::shared_ptr<flows::CovariateMechanism>> mechanisms_;
  vae::ImageVae vae_{nullptr};
  std::shared_ptr<vae::VaeImageMechanism> image_;
  CausalGraph graph_;
};

}  // namespace dscm::scm
