#include "flows/base_distribution.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "common/error.h"

namespace dscm::flows {

namespace {
constexpr double kHalfLog2Pi = 0.91893853320467274178;
}

BaseDistribution BaseDistribution::normal(double loc, double scale) {
  BaseDistribution b;
  b.kind = Kind::kNormal;
  b.loc = loc;
  b.scale = scale;
  b.validate();
  return b;
}

BaseDistribution BaseDistribution::bernoulli(double p) {
  BaseDistribution b;
  b.kind = Kind::kBernoulli;
  b.p = p;
  b.validate();
  return b;
}

BaseDistribution BaseDistribution::uniform(double lo, double hi) {
  BaseDistribution b;
  b.kind = Kind::kUniform;
  b.lo = lo;
  b.hi = hi;
  b.validate();
  return b;
}

void BaseDistribution::validate() const {
  switch (kind) {
    case Kind::kNormal:
      if (!std::isfinite(loc) || !(scale > 0.0) || !std::isfinite(scale))
        throw Error(ErrorCode::kInvalidArgument, "normal base needs finite loc and scale > 0");
      break;
    case Kind::kBernoulli:
      if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "bernoulli base needs p in [0, 1]");
      break;
    case Kind::kUniform:
      if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi))
        throw Error(ErrorCode::kInvalidArgument, "uniform base needs lo < hi");
      break;
  }
}

double BaseDistribution::log_prob(double x) const {
  const double ninf = -std::numeric_limits<double>::infinity();
  switch (kind) {
    case Kind::kNormal: {
      const double z = (x - loc) / scale;
      return -0.5 * z * z - std::log(scale) - kHalfLog2Pi;
    }
    case Kind::kBernoulli:
      if (x == 1.0) return std::log(p);
      if (x == 0.0) return std::log1p(-p);
      return ninf;
    case Kind::kUniform:
      return (x >= lo && x < hi) ? -std::log(hi - lo) : ninf;
  }
  return ninf;
}

torch::Tensor BaseDistribution::log_prob(const torch::Tensor& x) const {
  switch (kind) {
    case Kind::kNormal: {
      auto z = (x - loc) / scale;
      return -0.5 * z * z - (std::log(scale) + kHalfLog2Pi);
    }
    case Kind::kBernoulli: {
      auto lp1 = torch::full_like(x, std::log(p));
      auto lp0 = torch::full_like(x, std::log1p(-p));
      return torch::where(x > 0.5, lp1, lp0);
    }
    case Kind::kUniform: {
      auto inside = (x >= lo) & (x < hi);
      return torch::where(inside, torch::full_like(x, -std::log(hi - lo)),
                          torch::full_like(x, -std::numeric_limits<double>::infinity()));
    }
  }
  return x;
}

double BaseDistribution::sample(Rng& rng) const {
  switch (kind) {
    case Kind::kNormal:
      return std::normal_distribution<double>(loc, scale)(rng);
    case Kind::kBernoulli:
      return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p ? 1.0 : 0.0;
    case Kind::kUniform:
      return std::uniform_real_distribution<double>(lo, hi)(rng);
  }
  return 0.0;
}

bool BaseDistribution::supports(double x) const {
  if (!std::isfinite(x)) return false;
  switch (kind) {
    case Kind::kNormal: return true;
    case Kind::kBernoulli: return x == 0.0 || x == 1.0;
    case Kind::kUniform: return x >= lo && x < hi;
  }
  return false;
}

double BaseDistribution::standardize(double x) const {
  switch (kind) {
    case Kind::kNormal: return (x - loc) / scale;
    case Kind::kBernoulli: return x - 0.5;
    case Kind::kUniform: return (x - 0.5 * (lo + hi)) / (0.5 * (hi - lo));
  }
  return x;
}

torch::Tensor BaseDistribution::standardize(const torch::Tensor& x) const {
  switch (kind) {
    case Kind::kNormal: return (x - loc) / scale;
    case Kind::kBernoulli: return x - 0.5;
    case Kind::kUniform: return (x - 0.5 * (lo + hi)) / (0.5 * (hi - lo));
  }
  return x;
}

nlohmann::json BaseDistribution::to_json() const {
  switch (kind) {
    case Kind::kNormal: return {{"kind", "normal"}, {"loc", loc}, {"scale", scale}};
    case Kind::kBernoulli: return {{"kind", "bernoulli"}, {"p", p}};
    case Kind::kUniform: return {{"kind", "uniform"}, {"lo", lo}, {"hi", hi}};
  }
  return {};
}

BaseDistribution BaseDistribution::from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "normal") return normal(j.at("loc").get<double>(), j.at("scale").get<double>());
  if (kind == "bernoulli") return bernoulli(j.at("p").get<double>());
  if (kind == "uniform") return uniform(j.at("lo").get<double>(), j.at("hi").get<double>());
  throw Error(ErrorCode::kConfig, "unknown base distribution kind '" + kind + "'");
}

std::string to_string(BaseDistribution::Kind kind) {
  switch (kind) {
    case BaseDistribution::Kind::kNormal: return "normal";
    case BaseDistribution::Kind::kBernoulli: return "bernoulli";
    case BaseDistribution::Kind::kUniform: return "uniform";
  }
  return "?";
}

BaseDistribution estimate_base(std::span<const double> samples, BaseDistribution::Kind kind,
                               Domain domain, bool dequantized) {
  if (samples.size() < 2)
    throw Error(ErrorCode::kEstimation, "base estimation needs at least 2 samples");
  for (double x : samples)
    if (!std::isfinite(x)) throw Error(ErrorCode::kEstimation, "non-finite sample");

  switch (kind) {
    case BaseDistribution::Kind::kNormal: {
      double sum = 0.0;
      std::vector<double> ys;
      ys.reserve(samples.size());
      for (double x : samples) {
        if (domain == Domain::kLog && !(x > 0.0))
          throw Error(ErrorCode::kEstimation, "log-domain base needs positive samples, got " + std::to_string(x));
        if (domain == Domain::kLog1p && !(x > -1.0))
          throw Error(ErrorCode::kEstimation, "log1p-domain base needs samples > -1, got " + std::to_string(x));
        ys.push_back(domain_forward(domain, x));
        sum += ys.back();
      }
      const double mean = sum / static_cast<double>(ys.size());
      double ss = 0.0;
      for (double y : ys) ss += (y - mean) * (y - mean);
      const double sd = std::sqrt(ss / static_cast<double>(ys.size()));
      return BaseDistribution::normal(mean, std::max(sd, kMinBaseScale));
    }
    case BaseDistribution::Kind::kBernoulli: {
      double ones = 0.0;
      for (double x : samples) {
        if (x != 0.0 && x != 1.0)
          throw Error(ErrorCode::kEstimation, "bernoulli base needs 0/1 samples, got " + std::to_string(x));
        ones += x;
      }
      return BaseDistribution::bernoulli(ones / static_cast<double>(samples.size()));
    }
    case BaseDistribution::Kind::kUniform: {
      const auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
      const double hi = dequantized ? *mx + 1.0 : *mx;
      if (!(*mn < hi)) throw Error(ErrorCode::kEstimation, "uniform base needs a non-degenerate range");
      return BaseDistribution::uniform(*mn, hi);
    }
  }
  throw Error(ErrorCode::kEstimation, "unsupported base kind");
}

double dequantize(double value, Rng& rng) {
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (u >= 1.0) u = std::nextafter(1.0, 0.0);
  return value + u;
}

torch::Tensor dequantize(const torch::Tensor& values, torch::Generator& generator) {
  return values + torch::rand(values.sizes(), generator, values.options());
}

}  // namespace dscm::flows
