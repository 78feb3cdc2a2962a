#pragma once

#include <torch/torch.h>

namespace dscm::vae {

// Convolution with weight normalization: w = g * v / ||v|| per output channel.
class WNConv2dImpl : public torch::nn::Module {
 public:
  WNConv2dImpl(int in_channels, int out_channels, int kernel, int stride = 1, int padding = 0);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor weight() const;

 private:
  torch::Tensor v_, g_, bias_;
  int stride_;
  int padding_;
};
TORCH_MODULE(WNConv2d);

// Channel-wise attention driven by the conditioning vector c rather than by
// pooled features: x * 2 sigmoid(MLP(c)). Starts near a unit gate.
class SqueezeExciteImpl : public torch::nn::Module {
 public:
  SqueezeExciteImpl(int condition_dim, int channels, int hidden = 32);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& c);

 private:
  torch::nn::Linear squeeze_{nullptr};
  torch::nn::Linear excite_{nullptr};
};
TORCH_MODULE(SqueezeExcite);

// Linear layer with a fixed binary connectivity mask (MADE).
class MaskedLinearImpl : public torch::nn::Module {
 public:
  MaskedLinearImpl(torch::Tensor mask);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor weight, bias;

 private:
  torch::Tensor mask_;
};
TORCH_MODULE(MaskedLinear);

// One affine inverse autoregressive step: z_i = shift_i + scale_i * e_i,
// where (shift_i, scale_i) depend on e_{<i} and a context vector. The
// Jacobian is lower triangular and log|det| = sum log scale_i.
class AffineIafImpl : public torch::nn::Module {
 public:
  AffineIafImpl(int dim, int context_dim, int hidden);
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& base, const torch::Tensor& context);
  // Sequential solve of the forward map, dim passes.
  torch::Tensor inverse(const torch::Tensor& z, const torch::Tensor& context);
  void reset_to_identity();

 private:
  std::pair<torch::Tensor, torch::Tensor> shift_and_scale(const torch::Tensor& base,
                                                         const torch::Tensor& context);
  int dim_;
  MaskedLinear input_{nullptr};
  torch::nn::Linear context_{nullptr};
  MaskedLinear output_{nullptr};
};
TORCH_MODULE(AffineIaf);

}  // namespace dscm::vae
