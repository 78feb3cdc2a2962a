#include "vae/layers.h"

#include <cmath>

namespace dscm::vae {

using torch::Tensor;
namespace F = torch::nn::functional;

WNConv2dImpl::WNConv2dImpl(int in_channels, int out_channels, int kernel, int stride, int padding)
    : stride_(stride), padding_(padding) {
  auto v = torch::empty({out_channels, in_channels, kernel, kernel});
  torch::nn::init::kaiming_uniform_(v, std::sqrt(5.0));
  auto g = v.flatten(1).norm(2, 1);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * kernel * kernel));
  v_ = register_parameter("v", v);
  g_ = register_parameter("g", g);
  bias_ = register_parameter("bias", torch::empty({out_channels}).uniform_(-bound, bound));
}

Tensor WNConv2dImpl::weight() const {
  auto norm = v_.flatten(1).norm(2, 1).clamp_min(1e-12);
  return v_ * (g_ / norm).view({-1, 1, 1, 1});
}

Tensor WNConv2dImpl::forward(const Tensor& x) {
  return F::conv2d(x, weight(), F::Conv2dFuncOptions().bias(bias_).stride(stride_).padding(padding_));
}

SqueezeExciteImpl::SqueezeExciteImpl(int condition_dim, int channels, int hidden) {
  squeeze_ = register_module("squeeze", torch::nn::Linear(condition_dim, hidden));
  excite_ = register_module("excite", torch::nn::Linear(hidden, channels));
}

Tensor SqueezeExciteImpl::forward(const Tensor& x, const Tensor& c) {
  auto gate = 2.0 * torch::sigmoid(excite_->forward(F::silu(squeeze_->forward(c))));
  return x * gate.unsqueeze(-1).unsqueeze(-1);
}

MaskedLinearImpl::MaskedLinearImpl(Tensor mask) {
  const auto out = mask.size(0), in = mask.size(1);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = register_parameter("weight", torch::empty({out, in}).uniform_(-bound, bound));
  bias = register_parameter("bias", torch::empty({out}).uniform_(-bound, bound));
  mask_ = register_buffer("mask", mask.to(torch::kFloat32));
}

Tensor MaskedLinearImpl::forward(const Tensor& x) { return F::linear(x, weight * mask_, bias); }

namespace {

// MADE degrees: inputs 1..D, hidden cycle over 1..D-1, outputs 1..D. Output
// unit with degree d sees inputs of degree < d only.
Tensor hidden_mask(int dim, int hidden) {
  auto m = torch::zeros({hidden, dim});
  for (int h = 0; h < hidden; ++h) {
    const int deg_h = dim > 1 ? (h % (dim - 1)) + 1 : 0;
    for (int i = 0; i < dim; ++i) m[h][i] = (deg_h >= i + 1) ? 1.0 : 0.0;
  }
  return m;
}

Tensor output_mask(int dim, int hidden, int repeats) {
  auto m = torch::zeros({dim * repeats, hidden});
  for (int r = 0; r < repeats; ++r)
    for (int o = 0; o < dim; ++o)
      for (int h = 0; h < hidden; ++h) {
        const int deg_h = dim > 1 ? (h % (dim - 1)) + 1 : 0;
        m[r * dim + o][h] = (o + 1 > deg_h) ? 1.0 : 0.0;
      }
  return m;
}

}  // namespace

AffineIafImpl::AffineIafImpl(int dim, int context_dim, int hidden) : dim_(dim) {
  input_ = register_module("input", MaskedLinear(hidden_mask(dim, hidden)));
  context_ = register_module("context", torch::nn::Linear(context_dim, hidden));
  output_ = register_module("output", MaskedLinear(output_mask(dim, hidden, 2)));
  torch::NoGradGuard guard;
  output_->weight.mul_(1e-2);
  output_->bias.zero_();
}

std::pair<Tensor, Tensor> AffineIafImpl::shift_and_scale(const Tensor& base, const Tensor& context) {
  auto h = F::silu(input_->forward(base) + context_->forward(context));
  auto out = output_->forward(h);
  auto shift = out.narrow(1, 0, dim_);
  auto scale = 2.0 * torch::sigmoid(out.narrow(1, dim_, dim_));
  return {shift, scale};
}

std::pair<Tensor, Tensor> AffineIafImpl::forward(const Tensor& base, const Tensor& context) {
  auto [shift, scale] = shift_and_scale(base, context);
  return {shift + scale * base, torch::log(scale).sum(1)};
}

Tensor AffineIafImpl::inverse(const Tensor& z, const Tensor& context) {
  auto base = torch::zeros_like(z);
  for (int i = 0; i < dim_; ++i) {
    auto [shift, scale] = shift_and_scale(base, context);
    auto col = (z.select(1, i) - shift.select(1, i)) / scale.select(1, i);
    base = base.clone();
    base.select(1, i).copy_(col);
  }
  return base;
}

void AffineIafImpl::reset_to_identity() {
  torch::NoGradGuard guard;
  output_->weight.zero_();
  output_->bias.zero_();
}

}  // namespace dscm::vae
