#pragma once

#include <memory>
#include <span>
#include <vector>

#include <torch/torch.h>

#include "flows/base_distribution.h"
#include "flows/spline.h"
#include "graph/graph_spec.h"
#include "graph/mechanism.h"

namespace dscm::flows {

// Maps a variable's internal value to the standardized coordinate its
// children's conditioners consume.
struct Standardizer {
  Domain domain = Domain::kIdentity;
  BaseDistribution base;

  double operator()(double internal_value) const;
  torch::Tensor operator()(const torch::Tensor& internal_values) const;
};

// Learned covariate mechanism. All tensors are float64.
class CovariateMechanism : public ScalarMechanism {
 public:
  // values: [B] internal values; parents: [B, P] internal parent values.
  virtual torch::Tensor log_prob_batch(const torch::Tensor& values, const torch::Tensor& parents) const = 0;
  virtual std::vector<torch::Tensor> parameters() const = 0;
  virtual std::vector<std::pair<std::string, torch::Tensor>> named_parameters() const = 0;
  virtual const BaseDistribution& base() const = 0;
  virtual Standardizer standardizer() const = 0;
  // Same density with the flow removed (base distribution only).
  virtual double base_log_prob(double value) const = 0;
};

// s and n: the variable is its own exogenous draw.
class DirectBaseMechanism final : public CovariateMechanism {
 public:
  explicit DirectBaseMechanism(BaseDistribution base);

  std::string family() const override { return to_string(base_.kind); }
  double forward(double u, std::span<const double> parents) const override;
  double invert(double value, std::span<const double> parents) const override;
  double sample_exogenous(Rng& rng) const override { return base_.sample(rng); }
  double log_prob(double value, std::span<const double> parents) const override;
  std::vector<uint8_t> serialize() const override;

  torch::Tensor log_prob_batch(const torch::Tensor& values, const torch::Tensor& parents) const override;
  std::vector<torch::Tensor> parameters() const override { return {}; }
  std::vector<std::pair<std::string, torch::Tensor>> named_parameters() const override { return {}; }
  const BaseDistribution& base() const override { return base_; }
  Standardizer standardizer() const override { return {Domain::kIdentity, base_}; }
  double base_log_prob(double value) const override { return base_.log_prob(value); }

 private:
  BaseDistribution base_;
};

// Parents -> unconstrained spline parameters. With no parents the output is
// a learned constant vector.
class SplineConditionerImpl : public torch::nn::Module {
 public:
  SplineConditionerImpl(int parent_count, const SplineShape& shape);
  torch::Tensor forward(const torch::Tensor& standardized_parents);
  void reset_to_identity();

 private:
  int parent_count_;
  int output_size_;
  torch::nn::Sequential body_{nullptr};
  torch::Tensor constant_;
};
TORCH_MODULE(SplineConditioner);

// v = domain^{-1}(loc + scale * spline_pa((u - loc) / scale)), u ~ N(loc, scale).
// The spline acts in standard units of the base, so its tail bound is in
// base standard deviations.
class SplineMechanism final : public CovariateMechanism {
 public:
  SplineMechanism(const VariableSpec& spec, BaseDistribution base, std::vector<Standardizer> parents);

  std::string family() const override { return "spline"; }
  double forward(double u, std::span<const double> parents) const override;
  double invert(double value, std::span<const double> parents) const override;
  double sample_exogenous(Rng& rng) const override { return base_.sample(rng); }
  double log_prob(double value, std::span<const double> parents) const override;
  std::vector<uint8_t> serialize() const override;

  torch::Tensor log_prob_batch(const torch::Tensor& values, const torch::Tensor& parents) const override;
  std::vector<torch::Tensor> parameters() const override;
  std::vector<std::pair<std::string, torch::Tensor>> named_parameters() const override;
  const BaseDistribution& base() const override { return base_; }
  Standardizer standardizer() const override { return {domain_, base_}; }
  double base_log_prob(double value) const override;

  SplineTensors spline_for(const torch::Tensor& parents) const;
  Domain domain() const { return domain_; }
  const SplineShape& shape() const { return shape_; }
  void reset_to_identity();
  SplineConditioner conditioner() const { return conditioner_; }

 private:
  torch::Tensor parent_tensor(std::span<const double> parents) const;

  std::string name_;
  Domain domain_;
  SplineShape shape_;
  BaseDistribution base_;
  std::vector<Standardizer> parents_;
  SplineConditioner conditioner_{nullptr};
};

}  // namespace dscm::flows
