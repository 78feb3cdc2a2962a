#include "flows/spline.h"

#include <cmath>
#include <numeric>

#include "common/error.h"

namespace dscm::flows {

namespace F = torch::nn::functional;
using torch::Tensor;
using torch::indexing::Slice;

SplineParams SplineParams::identity(int bins, double tail_bound) {
  SplineParams p;
  p.tail_bound = tail_bound;
  const double w = 2.0 * tail_bound / bins;
  p.widths.assign(bins, w);
  p.heights.assign(bins, w);
  p.derivatives.assign(bins + 1, 1.0);
  p.lambdas.assign(bins, 0.5);
  return p;
}

void SplineParams::validate() const {
  const auto k = widths.size();
  if (k < 1 || heights.size() != k || lambdas.size() != k || derivatives.size() != k + 1)
    throw Error(ErrorCode::kInvalidArgument, "spline parameter sizes are inconsistent");
  if (!(tail_bound > 0.0)) throw Error(ErrorCode::kInvalidArgument, "tail bound must be positive");
  auto positive = [](const std::vector<double>& xs) {
    for (double x : xs)
      if (!(x > 0.0) || !std::isfinite(x)) return false;
    return true;
  };
  if (!positive(widths) || !positive(heights) || !positive(derivatives))
    throw Error(ErrorCode::kInvalidArgument, "spline widths, heights and derivatives must be positive");
  for (double l : lambdas)
    if (!(l > 0.0 && l < 1.0)) throw Error(ErrorCode::kInvalidArgument, "spline lambdas must lie in (0, 1)");
  const double span = 2.0 * tail_bound;
  const double tol = 1e-9 * span;
  if (std::abs(std::accumulate(widths.begin(), widths.end(), 0.0) - span) > tol ||
      std::abs(std::accumulate(heights.begin(), heights.end(), 0.0) - span) > tol)
    throw Error(ErrorCode::kInvalidArgument, "spline widths and heights must each sum to 2B");
}

int raw_parameter_count(int bins) { return 4 * bins - 1; }

namespace {

// Normalized bin sizes with a floor, returned as knots in [-B, B] plus sizes.
std::pair<Tensor, Tensor> knots_from_raw(const Tensor& raw, double min_size, double tail_bound) {
  const auto bins = raw.size(-1);
  auto sizes = torch::softmax(raw, -1);
  sizes = min_size + (1.0 - min_size * static_cast<double>(bins)) * sizes;
  auto cum = torch::cumsum(sizes, -1);
  cum = F::pad(cum, F::PadFuncOptions({1, 0}).mode(torch::kConstant).value(0.0));
  cum = 2.0 * tail_bound * cum - tail_bound;
  // Pin the end knots exactly so the tails join without a gap.
  auto first = torch::full_like(cum.index({Slice(), Slice(0, 1)}), -tail_bound);
  auto last = torch::full_like(cum.index({Slice(), Slice(-1, torch::indexing::None)}), tail_bound);
  cum = torch::cat({first, cum.index({Slice(), Slice(1, -1)}), last}, -1);
  auto widths = cum.index({Slice(), Slice(1, torch::indexing::None)}) - cum.index({Slice(), Slice(0, -1)});
  return {cum, widths};
}

Tensor knots_from_sizes(const Tensor& sizes, double tail_bound) {
  auto cum = torch::cumsum(sizes, -1);
  cum = F::pad(cum, F::PadFuncOptions({1, 0}).mode(torch::kConstant).value(0.0)) - tail_bound;
  auto first = torch::full_like(cum.index({Slice(), Slice(0, 1)}), -tail_bound);
  auto last = torch::full_like(cum.index({Slice(), Slice(-1, torch::indexing::None)}), tail_bound);
  return torch::cat({first, cum.index({Slice(), Slice(1, -1)}), last}, -1);
}

// Index of the bin containing each input, clamped to valid bins.
Tensor locate_bins(const Tensor& knots, const Tensor& inputs) {
  const auto bins = knots.size(-1) - 1;
  auto inner = knots.index({Slice(), Slice(1, -1)});
  auto idx = (inputs.unsqueeze(-1) >= inner).sum(-1, /*keepdim=*/true);
  return idx.clamp(0, bins - 1);
}

struct BinView {
  Tensor x0, width, y0, height, d0, d1, lambda;
};

BinView gather_bin(const SplineTensors& p, const Tensor& idx) {
  BinView b;
  b.x0 = p.knots_x.gather(-1, idx).squeeze(-1);
  b.width = p.widths.gather(-1, idx).squeeze(-1);
  b.y0 = p.knots_y.gather(-1, idx).squeeze(-1);
  b.height = p.heights.gather(-1, idx).squeeze(-1);
  b.d0 = p.derivatives.gather(-1, idx).squeeze(-1);
  b.d1 = p.derivatives.gather(-1, idx + 1).squeeze(-1);
  b.lambda = p.lambdas.gather(-1, idx).squeeze(-1);
  return b;
}

// Rational weights for the two pieces of a bin. w_a = 1 at the left knot,
// w_b at the right knot, w_c at the interior split point y_c.
struct PieceWeights {
  Tensor wa, wb, wc, ya, yb, yc;
};

PieceWeights piece_weights(const BinView& b) {
  PieceWeights w;
  w.wa = torch::ones_like(b.d0);
  w.wb = torch::sqrt(b.d0 / b.d1);
  auto slope = b.height / b.width;
  w.wc = (b.lambda * w.wa * b.d0 + (1.0 - b.lambda) * w.wb * b.d1) / slope;
  w.ya = b.y0;
  w.yb = b.y0 + b.height;
  w.yc = ((1.0 - b.lambda) * w.wa * w.ya + b.lambda * w.wb * w.yb) /
         ((1.0 - b.lambda) * w.wa + b.lambda * w.wb);
  return w;
}

void check_batch(const Tensor& inputs, const SplineTensors& p) {
  if (inputs.dim() != 1 || p.widths.dim() != 2 ||
      (p.widths.size(0) != inputs.size(0) && p.widths.size(0) != 1))
    throw Error(ErrorCode::kInvalidArgument, "spline batch shape mismatch");
}

SplineTensors broadcast_to(const SplineTensors& p, int64_t n) {
  if (p.widths.size(0) == n) return p;
  SplineTensors out = p;
  out.widths = p.widths.expand({n, -1});
  out.heights = p.heights.expand({n, -1});
  out.derivatives = p.derivatives.expand({n, -1});
  out.lambdas = p.lambdas.expand({n, -1});
  out.knots_x = p.knots_x.expand({n, -1});
  out.knots_y = p.knots_y.expand({n, -1});
  return out;
}

}  // namespace

SplineTensors constrain(const Tensor& raw, int bins, double tail_bound) {
  if (raw.dim() != 2 || raw.size(-1) != raw_parameter_count(bins))
    throw Error(ErrorCode::kInvalidArgument, "raw spline parameter vector has wrong length");
  SplineTensors p;
  p.tail_bound = tail_bound;
  auto raw_w = raw.index({Slice(), Slice(0, bins)});
  auto raw_h = raw.index({Slice(), Slice(bins, 2 * bins)});
  auto raw_d = raw.index({Slice(), Slice(2 * bins, 3 * bins - 1)});
  auto raw_l = raw.index({Slice(), Slice(3 * bins - 1, 4 * bins - 1)});

  std::tie(p.knots_x, p.widths) = knots_from_raw(raw_w, kMinBinWidth, tail_bound);
  std::tie(p.knots_y, p.heights) = knots_from_raw(raw_h, kMinBinHeight, tail_bound);

  // softplus(0 + offset) + min == 1, so zero raw derivatives are unit slopes.
  const double offset = std::log(std::expm1(1.0 - kMinDerivative));
  auto interior = kMinDerivative + F::softplus(raw_d + offset);
  auto ones = torch::ones({raw.size(0), 1}, raw.options());
  p.derivatives = torch::cat({ones, interior, ones}, -1);

  p.lambdas = (1.0 - 2.0 * kMinLambda) * torch::sigmoid(raw_l) + kMinLambda;
  return p;
}

SplineTensors to_tensors(const SplineParams& params, torch::Dtype dtype) {
  params.validate();
  auto opts = torch::TensorOptions().dtype(dtype);
  auto row = [&](const std::vector<double>& v) {
    return torch::tensor(v, torch::TensorOptions().dtype(torch::kFloat64)).to(dtype).unsqueeze(0);
  };
  SplineTensors p;
  p.tail_bound = params.tail_bound;
  p.widths = row(params.widths);
  p.heights = row(params.heights);
  p.derivatives = row(params.derivatives);
  p.lambdas = row(params.lambdas);
  p.knots_x = knots_from_sizes(p.widths, params.tail_bound);
  p.knots_y = knots_from_sizes(p.heights, params.tail_bound);
  (void)opts;
  return p;
}

SplineParams to_params(const SplineTensors& t, int64_t row) {
  auto vec = [&](const Tensor& x) {
    auto r = x.index({row}).to(torch::kFloat64).contiguous();
    return std::vector<double>(r.data_ptr<double>(), r.data_ptr<double>() + r.numel());
  };
  SplineParams p;
  p.tail_bound = t.tail_bound;
  p.widths = vec(t.widths);
  p.heights = vec(t.heights);
  p.derivatives = vec(t.derivatives);
  p.lambdas = vec(t.lambdas);
  return p;
}

std::pair<Tensor, Tensor> spline_forward(const Tensor& inputs, const SplineTensors& params) {
  check_batch(inputs, params);
  const auto p = broadcast_to(params, inputs.size(0));
  const double bound = p.tail_bound;
  auto inside = (inputs >= -bound) & (inputs <= bound);
  auto x = inputs.clamp(-bound, bound);

  auto idx = locate_bins(p.knots_x, x);
  auto b = gather_bin(p, idx);
  auto w = piece_weights(b);

  auto theta = (x - b.x0) / b.width;
  auto left = theta <= b.lambda;
  auto numerator = torch::where(left, w.wa * w.ya * (b.lambda - theta) + w.wc * w.yc * theta,
                                w.wc * w.yc * (1.0 - theta) + w.wb * w.yb * (theta - b.lambda));
  auto denominator = torch::where(left, w.wa * (b.lambda - theta) + w.wc * theta,
                                  w.wc * (1.0 - theta) + w.wb * (theta - b.lambda));
  auto out = numerator / denominator;
  auto deriv_num = torch::where(left, w.wa * w.wc * b.lambda * (w.yc - w.ya),
                                w.wb * w.wc * (1.0 - b.lambda) * (w.yb - w.yc)) /
                   b.width;
  auto log_det = torch::log(deriv_num) - 2.0 * torch::log(torch::abs(denominator));

  return {torch::where(inside, out, inputs), torch::where(inside, log_det, torch::zeros_like(log_det))};
}

std::pair<Tensor, Tensor> spline_inverse(const Tensor& inputs, const SplineTensors& params) {
  check_batch(inputs, params);
  const auto p = broadcast_to(params, inputs.size(0));
  const double bound = p.tail_bound;
  auto inside = (inputs >= -bound) & (inputs <= bound);
  auto y = inputs.clamp(-bound, bound);

  auto idx = locate_bins(p.knots_y, y);
  auto b = gather_bin(p, idx);
  auto w = piece_weights(b);

  auto left = y <= w.yc;
  auto numerator = torch::where(left, b.lambda * w.wa * (w.ya - y),
                                (w.wc - b.lambda * w.wb) * y + b.lambda * w.wb * w.yb - w.wc * w.yc);
  auto denominator = torch::where(left, (w.wc - w.wa) * y + w.wa * w.ya - w.wc * w.yc,
                                  (w.wc - w.wb) * y + w.wb * w.yb - w.wc * w.yc);
  auto theta = numerator / denominator;
  auto out = theta * b.width + b.x0;
  auto deriv_num = torch::where(left, w.wa * w.wc * b.lambda * (w.yc - w.ya),
                                w.wb * w.wc * (1.0 - b.lambda) * (w.yb - w.yc)) *
                   b.width;
  auto log_det = torch::log(deriv_num) - 2.0 * torch::log(torch::abs(denominator));

  return {torch::where(inside, out, inputs), torch::where(inside, log_det, torch::zeros_like(log_det))};
}

std::pair<double, double> spline_forward(double u, const SplineParams& params) {
  torch::NoGradGuard guard;
  auto t = to_tensors(params);
  auto [v, ld] = spline_forward(torch::tensor({u}, torch::kFloat64), t);
  return {v.item<double>(), ld.item<double>()};
}

std::pair<double, double> spline_inverse(double v, const SplineParams& params) {
  torch::NoGradGuard guard;
  auto t = to_tensors(params);
  auto [u, ld] = spline_inverse(torch::tensor({v}, torch::kFloat64), t);
  return {u.item<double>(), ld.item<double>()};
}

}  // namespace dscm::flows
