#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "common/image.h"

namespace dscm {

using Rng = std::mt19937_64;

// f_i for a scalar variable: value = forward(u, parents). Implementations
// must be safe for concurrent const calls.
class ScalarMechanism {
 public:
  virtual ~ScalarMechanism() = default;

  virtual std::string family() const = 0;
  virtual double forward(double u, std::span<const double> parents) const = 0;
  // Exact inverse in u. Throws Error(kDomain) for values outside the
  // mechanism's support.
  virtual double invert(double value, std::span<const double> parents) const = 0;
  virtual double sample_exogenous(Rng& rng) const = 0;
  virtual double log_prob(double value, std::span<const double> parents) const = 0;
  // Byte image of every parameter; used to check mechanism invariance.
  virtual std::vector<uint8_t> serialize() const = 0;
};

// Replacement mechanism for do(v := value).
class ConstantMechanism final : public ScalarMechanism {
 public:
  explicit ConstantMechanism(double value) : value_(value) {}

  std::string family() const override { return "constant"; }
  double forward(double, std::span<const double>) const override { return value_; }
  double invert(double, std::span<const double>) const override { return 0.0; }
  double sample_exogenous(Rng&) const override { return 0.0; }
  double log_prob(double value, std::span<const double>) const override;
  std::vector<uint8_t> serialize() const override;
  double value() const { return value_; }

 private:
  double value_;
};

// value = intercept + sum_j weight_j * parent_j + scale * u, u ~ N(0, 1).
class AffineMechanism final : public ScalarMechanism {
 public:
  AffineMechanism(double intercept, std::vector<double> weights, double scale);

  std::string family() const override { return "affine"; }
  double forward(double u, std::span<const double> parents) const override;
  double invert(double value, std::span<const double> parents) const override;
  double sample_exogenous(Rng& rng) const override;
  double log_prob(double value, std::span<const double> parents) const override;
  std::vector<uint8_t> serialize() const override;

 private:
  double mean(std::span<const double> parents) const;

  double intercept_;
  std::vector<double> weights_;
  double scale_;
};

// u_x = (z, eps): z = (z0, z1, z2) is the amortized, non-invertible part and
// eps the invertible residual with x = loc(z, c) + scale(z, c) * eps.
struct ImageExogenous {
  torch::Tensor z0;   // [N, h0, w0] in {0, 1}
  torch::Tensor z1;   // [M, h1, w1] in {0, 1}
  torch::Tensor z2;   // [K]
  torch::Tensor eps;  // [C, H, W]
};

enum class AbductionMode { kDeterministic, kSample };

class ImageMechanism {
 public:
  virtual ~ImageMechanism() = default;

  virtual ImageExogenous abduct(const Image& image, std::span<const double> parents,
                                AbductionMode mode = AbductionMode::kDeterministic,
                                uint64_t seed = 0) const = 0;
  virtual Image forward(const ImageExogenous& u, std::span<const double> parents) const = 0;
  virtual ImageExogenous sample_exogenous(uint64_t seed) const = 0;
  virtual int height() const = 0;
  virtual int width() const = 0;
};

}  // namespace dscm
