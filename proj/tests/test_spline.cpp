#include "testing.h"

#include <cmath>
#include <random>

#include "common/error.h"
#include "flows/spline.h"

using namespace dscm;
using namespace dscm::flows;

namespace {

// Random valid parameters built directly (not through constrain()).
SplineParams random_params(std::mt19937_64& rng, int bins = 8, double bound = 3.0) {
  std::uniform_real_distribution<double> size(0.05, 1.0);
  std::uniform_real_distribution<double> deriv(0.2, 5.0);
  std::uniform_real_distribution<double> lam(0.05, 0.95);
  SplineParams p;
  p.tail_bound = bound;
  double sw = 0, sh = 0;
  for (int k = 0; k < bins; ++k) {
    p.widths.push_back(size(rng));
    p.heights.push_back(size(rng));
    sw += p.widths.back();
    sh += p.heights.back();
    p.lambdas.push_back(lam(rng));
  }
  for (auto& w : p.widths) w *= 2 * bound / sw;
  for (auto& h : p.heights) h *= 2 * bound / sh;
  // Renormalize the last entry so the sums are exact in floating point.
  double acc = 0;
  for (int k = 0; k + 1 < bins; ++k) acc += p.widths[k];
  p.widths.back() = 2 * bound - acc;
  acc = 0;
  for (int k = 0; k + 1 < bins; ++k) acc += p.heights[k];
  p.heights.back() = 2 * bound - acc;
  for (int k = 0; k <= bins; ++k) p.derivatives.push_back(deriv(rng));
  return p;
}

}  // namespace

TEST_CASE("identity configuration is the identity map") {
  const auto p = SplineParams::identity(8, 3.0);
  for (double u = -5.0; u <= 5.0; u += 0.137) {
    auto [v, ld] = spline_forward(u, p);
    CHECK(v == doctest::Approx(u).epsilon(1e-12));
    CHECK(std::abs(ld) < 1e-12);
    auto [w, ld_inv] = spline_inverse(u, p);
    CHECK(w == doctest::Approx(u).epsilon(1e-12));
    CHECK(std::abs(ld_inv) < 1e-12);
  }
}

TEST_CASE("tails are the identity with zero log-det") {
  std::mt19937_64 rng(3);
  const auto p = random_params(rng);
  for (double u : {3.0 + 1.0, -3.0 - 1.0, 17.5, -1e3}) {
    auto [v, ld] = spline_forward(u, p);
    CHECK(v == u);
    CHECK(ld == 0.0);
    auto [w, ld_inv] = spline_inverse(u, p);
    CHECK(w == u);
    CHECK(ld_inv == 0.0);
  }
}

TEST_CASE("zero raw vector maps to the identity spline") {
  auto raw = torch::zeros({1, raw_parameter_count(8)}, torch::kFloat64);
  auto p = to_params(constrain(raw, 8, 3.0));
  const auto id = SplineParams::identity(8, 3.0);
  for (int k = 0; k < 8; ++k) {
    CHECK(p.widths[k] == doctest::Approx(id.widths[k]).epsilon(1e-12));
    CHECK(p.heights[k] == doctest::Approx(id.heights[k]).epsilon(1e-12));
    CHECK(p.lambdas[k] == doctest::Approx(0.5).epsilon(1e-12));
  }
  for (double d : p.derivatives) CHECK(d == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("forward log-det matches centered finite differences") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(-2.999, 2.999);
  const double h = 1e-6;
  int checked = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = random_params(rng);
    auto t = to_tensors(p);
    std::vector<double> us;
    for (int i = 0; i < 40; ++i) us.push_back(pos(rng));
    auto u = torch::tensor(us, torch::kFloat64);
    auto [v, ld] = spline_forward(u, t);
    auto [vp, _a] = spline_forward(u + h, t);
    auto [vm, _b] = spline_forward(u - h, t);
    auto fd = (vp - vm) / (2 * h);
    auto rel = ((fd - torch::exp(ld)).abs() / fd.abs()).max().item<double>();
    CHECK(rel <= 1e-4);

    auto [w, ld_inv] = spline_inverse(u, t);
    auto [wp, _c] = spline_inverse(u + h, t);
    auto [wm, _d] = spline_inverse(u - h, t);
    auto fd_inv = (wp - wm) / (2 * h);
    CHECK(((fd_inv - torch::exp(ld_inv)).abs() / fd_inv.abs()).max().item<double>() <= 1e-4);
    checked += 40;
  }
  CHECK(checked == 2000);
}

TEST_CASE("forward and inverse round-trip and negate each other's log-det") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> pos(-4.0, 4.0);
  double worst = 0.0, worst_ld = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const auto p = random_params(rng);
    const double v = pos(rng);
    auto [u, ld_inv] = spline_inverse(v, p);
    auto [v2, ld_fwd] = spline_forward(u, p);
    worst = std::max(worst, std::abs(v2 - v));
    worst_ld = std::max(worst_ld, std::abs(ld_inv + ld_fwd));
    auto [w, ld_f] = spline_forward(v, p);
    auto [v3, ld_i] = spline_inverse(w, p);
    worst = std::max(worst, std::abs(v3 - v));
    worst_ld = std::max(worst_ld, std::abs(ld_i + ld_f));
  }
  CHECK(worst <= 1e-6);
  CHECK(worst_ld <= 1e-9);
}

TEST_CASE("forward is strictly increasing") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto t = to_tensors(random_params(rng));
    auto grid = torch::linspace(-3.5, 3.5, 5001, torch::kFloat64);
    auto [v, ld] = spline_forward(grid, t);
    auto diffs = v.slice(0, 1) - v.slice(0, 0, -1);
    CHECK(diffs.min().item<double>() > 0.0);
  }
}

TEST_CASE("any raw vector yields valid parameters") {
  torch::manual_seed(21);
  auto raw = torch::randn({10000, raw_parameter_count(8)}, torch::kFloat64) * 6.0;
  auto t = constrain(raw, 8, 3.0);
  for (int64_t i = 0; i < 10000; i += 1) {
    auto p = to_params(t, i);
    CHECK_NOTHROW(p.validate());
    if (i > 200) i += 37;  // spot-check the rest
  }
  CHECK(t.widths.min().item<double>() > 0);
  CHECK(t.heights.min().item<double>() > 0);
  CHECK(t.derivatives.min().item<double>() > 0);
  CHECK(t.lambdas.min().item<double>() > 0);
  CHECK(t.lambdas.max().item<double>() < 1);
  CHECK(((t.widths.sum(-1) - 6.0).abs().max().item<double>()) < 1e-9);
  CHECK(((t.heights.sum(-1) - 6.0).abs().max().item<double>()) < 1e-9);
}

TEST_CASE("invalid parameters are rejected") {
  auto p = SplineParams::identity(4, 3.0);
  p.derivatives[2] = 0.0;
  CHECK_THROWS_AS(p.validate(), Error);
  p = SplineParams::identity(4, 3.0);
  p.widths[0] += 0.1;
  CHECK_THROWS_AS(p.validate(), Error);
  p = SplineParams::identity(4, 3.0);
  p.lambdas[1] = 1.0;
  CHECK_THROWS_AS(p.validate(), Error);
}
