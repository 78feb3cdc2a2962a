#pragma once

#include <array>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "flows/mechanism.h"
#include "graph/mechanism.h"
#include "vae/layers.h"

namespace dscm::vae {

struct VaeConfig {
  int height = 64;
  int width = 64;
  int channels = 1;
  int latent_dim = 64;    // K
  int z1_channels = 4;    // M, at H/8 x W/8
  int z0_channels = 1;    // N, at H/2 x W/2
  std::vector<int> stage_channels{16, 32, 64, 128};
  int condition_dim = 4;  // c = (n, v, b, l)
  int hidden = 256;
  int flow_context = 64;
  double temperature = 1.0 / 3.0;
  double scale_min = 1e-3;

  static VaeConfig desk();      // 64 x 64
  static VaeConfig small128();  // K=100, L=8192, M=4, N=1
  static VaeConfig large224();  // K=120, L=25088, M=8, N=2

  // L: flattened encoder feature size ahead of the normal latent.
  int pre_latent_features() const;
  std::array<int64_t, 3> z0_shape() const;
  std::array<int64_t, 3> z1_shape() const;
  void validate() const;

  nlohmann::json to_json() const;
  static VaeConfig from_json(const nlohmann::json& j);
};

struct EncoderOutput {
  torch::Tensor z2_loc;     // [B, K]
  torch::Tensor z2_scale;   // [B, K]
  torch::Tensor context;    // [B, flow_context]
  torch::Tensor z0_logits;  // [B, N, H/2, W/2]
  torch::Tensor z1_logits;  // [B, M, H/8, W/8]
};

struct DecoderOutput {
  torch::Tensor loc;    // [B, C, H, W]
  torch::Tensor scale;  // [B, C, H, W], >= scale_min
};

// Per-example terms of the image ELBO. KLs are in nats.
struct ImageTerms {
  torch::Tensor log_likelihood;  // [B]
  torch::Tensor kl_z0;           // [B]
  torch::Tensor kl_z1;           // [B]
  torch::Tensor kl_z2;           // [B]
  DecoderOutput output;
};

// Straight-through relaxed Bernoulli with logistic (Gumbel difference)
// noise. In hard mode the value is exactly {0, 1} while the gradient is that
// of the relaxed sample.
torch::Tensor sample_binary(const torch::Tensor& logits, double temperature, bool hard,
                            torch::Generator& generator);

// KL(Bernoulli(sigmoid(logits)) || Bernoulli(0.5)) summed over all but the
// batch dimension.
torch::Tensor kl_binary(const torch::Tensor& logits);

// Sum over pixels of log Laplace(x | loc, scale), per batch element.
torch::Tensor log_likelihood(const torch::Tensor& x, const DecoderOutput& out);

class ImageVaeImpl : public torch::nn::Module {
 public:
  explicit ImageVaeImpl(VaeConfig config);

  const VaeConfig& config() const { return config_; }

  EncoderOutput encode(const torch::Tensor& x, const torch::Tensor& c);
  std::pair<torch::Tensor, torch::Tensor> posterior_flow(const torch::Tensor& z2_base,
                                                         const torch::Tensor& context);
  torch::Tensor posterior_flow_inverse(const torch::Tensor& z2, const torch::Tensor& context);
  DecoderOutput decode(const torch::Tensor& z0, const torch::Tensor& z1, const torch::Tensor& z2,
                       const torch::Tensor& c);

  // One stochastic pass: sample every latent from the posterior and score.
  ImageTerms evaluate(const torch::Tensor& x, const torch::Tensor& c, torch::Generator& generator);

  // Deterministic (posterior mean / 0.5 threshold) or sampled abduction.
  ImageExogenous abduct(const torch::Tensor& x, const torch::Tensor& c, AbductionMode mode,
                        uint64_t seed);
  torch::Tensor reconstruct(const ImageExogenous& u, const torch::Tensor& c);
  ImageExogenous sample_prior(uint64_t seed);

  void reset_flow_to_identity() { iaf_->reset_to_identity(); }

 private:
  void check_input(const torch::Tensor& x, const torch::Tensor& c) const;

  VaeConfig config_;
  // encoder
  torch::nn::ModuleList enc_stages_;
  WNConv2d z0_head_{nullptr};
  WNConv2d z1_head_{nullptr};
  torch::nn::Linear enc_fc_{nullptr};
  torch::nn::Linear enc_loc_{nullptr};
  torch::nn::Linear enc_scale_{nullptr};
  torch::nn::Linear enc_context_{nullptr};
  AffineIaf iaf_{nullptr};
  // decoder
  torch::nn::Linear dec_fc1_{nullptr};
  torch::nn::Linear dec_fc2_{nullptr};
  torch::nn::ModuleList dec_convs_;
  torch::nn::ModuleList dec_se_;
  WNConv2d dec_out_hidden_{nullptr};
  WNConv2d dec_out_{nullptr};
};
TORCH_MODULE(ImageVae);

torch::Tensor image_to_tensor(const Image& image);
Image tensor_to_image(const torch::Tensor& t);

// f_x bound into the causal graph. Parent values arrive in the image
// variable's declared parent order and are standardized into c.
class VaeImageMechanism final : public ImageMechanism {
 public:
  VaeImageMechanism(ImageVae vae, std::vector<flows::Standardizer> condition);

  ImageExogenous abduct(const Image& image, std::span<const double> parents, AbductionMode mode,
                        uint64_t seed) const override;
  Image forward(const ImageExogenous& u, std::span<const double> parents) const override;
  ImageExogenous sample_exogenous(uint64_t seed) const override;
  int height() const override { return vae_->config().height; }
  int width() const override { return vae_->config().width; }

  torch::Tensor condition(std::span<const double> parents) const;
  // Batched standardization of internal parent values [B, P] -> c [B, P].
  torch::Tensor condition_batch(const torch::Tensor& parents) const;
  ImageVae vae() const { return vae_; }

 private:
  ImageVae vae_;
  std::vector<flows::Standardizer> condition_;
};

}  // namespace dscm::vae
