#pragma once

#include <span>
#include <string>

#include <json.hpp>
#include <torch/torch.h>

#include "graph/graph_spec.h"
#include "graph/mechanism.h"

namespace dscm::flows {

inline constexpr double kMinBaseScale = 1e-3;

struct BaseDistribution {
  enum class Kind { kNormal, kBernoulli, kUniform };

  Kind kind = Kind::kNormal;
  double loc = 0.0;
  double scale = 1.0;
  double p = 0.5;
  double lo = 0.0;
  double hi = 1.0;

  static BaseDistribution normal(double loc, double scale);
  static BaseDistribution bernoulli(double p);
  static BaseDistribution uniform(double lo, double hi);

  void validate() const;
  double log_prob(double x) const;
  torch::Tensor log_prob(const torch::Tensor& x) const;
  double sample(Rng& rng) const;
  bool supports(double x) const;
  // Roughly zero-mean, unit-spread coordinate used as conditioner input.
  double standardize(double x) const;
  torch::Tensor standardize(const torch::Tensor& x) const;

  nlohmann::json to_json() const;
  static BaseDistribution from_json(const nlohmann::json& j);
};

std::string to_string(BaseDistribution::Kind kind);

// Fits a base distribution to training samples. Normal bases are fit in the
// flow's domain (log or log1p of positive covariates), with the scale clamped
// to kMinBaseScale. Uniform bases over dequantized integers extend to max+1.
BaseDistribution estimate_base(std::span<const double> samples, BaseDistribution::Kind kind,
                               Domain domain = Domain::kIdentity, bool dequantized = false);

// value + U[0, 1).
double dequantize(double value, Rng& rng);
torch::Tensor dequantize(const torch::Tensor& values, torch::Generator& generator);

}  // namespace dscm::flows
