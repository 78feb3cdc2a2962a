#pragma once

#include <utility>
#include <vector>

#include <torch/torch.h>

namespace dscm::flows {

// Monotone linear rational spline on [-B, B], identity outside. Each bin
// k between knots (x_k, y_k) and (x_{k+1}, y_{k+1}) is split at lambda_k
// into two linear-rational pieces that match the knot derivatives.
struct SplineParams {
  std::vector<double> widths;       // K entries, sum 2B
  std::vector<double> heights;      // K entries, sum 2B
  std::vector<double> derivatives;  // K + 1 knot derivatives
  std::vector<double> lambdas;      // K entries in (0, 1)
  double tail_bound = 3.0;

  int bins() const { return static_cast<int>(widths.size()); }
  static SplineParams identity(int bins, double tail_bound);
  // Throws kInvalidArgument when monotonicity or normalization fails.
  void validate() const;
};

// Batched constrained parameters: widths/heights/lambdas [N, K],
// derivatives [N, K + 1], cumulative knots [N, K + 1].
struct SplineTensors {
  torch::Tensor widths;
  torch::Tensor heights;
  torch::Tensor derivatives;
  torch::Tensor lambdas;
  torch::Tensor knots_x;
  torch::Tensor knots_y;
  double tail_bound = 3.0;

  int bins() const { return static_cast<int>(widths.size(-1)); }
};

inline constexpr double kMinBinWidth = 1e-3;
inline constexpr double kMinBinHeight = 1e-3;
inline constexpr double kMinDerivative = 1e-3;
inline constexpr double kMinLambda = 0.025;

// Unconstrained vector layout: [widths K | heights K | interior derivs K-1 | lambdas K].
int raw_parameter_count(int bins);

// Total map from any real raw vector [N, 4K-1] to valid spline parameters.
// An all-zero raw vector yields the identity spline.
SplineTensors constrain(const torch::Tensor& raw, int bins, double tail_bound);
SplineTensors to_tensors(const SplineParams& params, torch::Dtype dtype = torch::kFloat64);
SplineParams to_params(const SplineTensors& tensors, int64_t row = 0);

// Elementwise over [N]; returns (output, log|d output / d input|).
std::pair<torch::Tensor, torch::Tensor> spline_forward(const torch::Tensor& inputs,
                                                       const SplineTensors& params);
std::pair<torch::Tensor, torch::Tensor> spline_inverse(const torch::Tensor& inputs,
                                                       const SplineTensors& params);

std::pair<double, double> spline_forward(double u, const SplineParams& params);
std::pair<double, double> spline_inverse(double v, const SplineParams& params);

}  // namespace dscm::flows
