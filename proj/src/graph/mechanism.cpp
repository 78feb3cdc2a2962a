#include "graph/mechanism.h"

#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

#include "common/error.h"

namespace dscm {

namespace {
void append_double(std::vector<uint8_t>& out, double x) {
  uint8_t bytes[sizeof(double)];
  std::memcpy(bytes, &x, sizeof(double));
  out.insert(out.end(), bytes, bytes + sizeof(double));
}
}  // namespace

double ConstantMechanism::log_prob(double value, std::span<const double>) const {
  return value == value_ ? 0.0 : -std::numeric_limits<double>::infinity();
}

std::vector<uint8_t> ConstantMechanism::serialize() const {
  std::vector<uint8_t> out;
  append_double(out, value_);
  return out;
}

AffineMechanism::AffineMechanism(double intercept, std::vector<double> weights, double scale)
    : intercept_(intercept), weights_(std::move(weights)), scale_(scale) {
  if (!(scale_ > 0.0)) throw Error(ErrorCode::kInvalidArgument, "affine mechanism scale must be positive");
}

double AffineMechanism::mean(std::span<const double> parents) const {
  if (parents.size() != weights_.size())
    throw Error(ErrorCode::kInvalidArgument, "affine mechanism parent count mismatch");
  double m = intercept_;
  for (size_t j = 0; j < weights_.size(); ++j) m += weights_[j] * parents[j];
  return m;
}

double AffineMechanism::forward(double u, std::span<const double> parents) const {
  return mean(parents) + scale_ * u;
}

double AffineMechanism::invert(double value, std::span<const double> parents) const {
  if (!std::isfinite(value)) throw Error(ErrorCode::kDomain, "non-finite value");
  return (value - mean(parents)) / scale_;
}

double AffineMechanism::sample_exogenous(Rng& rng) const {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

double AffineMechanism::log_prob(double value, std::span<const double> parents) const {
  const double z = (value - mean(parents)) / scale_;
  return -0.5 * z * z - std::log(scale_) - 0.5 * std::log(2.0 * std::numbers::pi);
}

std::vector<uint8_t> AffineMechanism::serialize() const {
  std::vector<uint8_t> out;
  append_double(out, intercept_);
  for (double w : weights_) append_double(out, w);
  append_double(out, scale_);
  return out;
}

}  // namespace dscm
