#include "vae/vae.h"

#include <cmath>

#include <ATen/CPUGeneratorImpl.h>

#include "common/error.h"

namespace dscm::vae {

using torch::Tensor;
namespace F = torch::nn::functional;

namespace {
constexpr double kLog2 = 0.69314718055994530942;
constexpr double kHalfLog2Pi = 0.91893853320467274178;

Tensor normal_log_prob(const Tensor& x, const Tensor& loc, const Tensor& scale) {
  auto z = (x - loc) / scale;
  return -0.5 * z * z - torch::log(scale) - kHalfLog2Pi;
}

Tensor upsample2(const Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .scale_factor(std::vector<double>{2.0, 2.0})
                               .mode(torch::kNearest));
}
}  // namespace

// --- config ----------------------------------------------------------------

VaeConfig VaeConfig::desk() { return VaeConfig{}; }

VaeConfig VaeConfig::small128() {
  VaeConfig c;
  c.height = c.width = 128;
  c.latent_dim = 100;
  c.z1_channels = 4;
  c.z0_channels = 1;
  c.stage_channels = {32, 64, 128, 128};
  return c;
}

VaeConfig VaeConfig::large224() {
  VaeConfig c;
  c.height = c.width = 224;
  c.latent_dim = 120;
  c.z1_channels = 8;
  c.z0_channels = 2;
  c.stage_channels = {32, 64, 128, 128};
  return c;
}

int VaeConfig::pre_latent_features() const {
  return stage_channels.back() * (height / 16) * (width / 16);
}

std::array<int64_t, 3> VaeConfig::z0_shape() const { return {z0_channels, height / 2, width / 2}; }
std::array<int64_t, 3> VaeConfig::z1_shape() const { return {z1_channels, height / 8, width / 8}; }

void VaeConfig::validate() const {
  if (height <= 0 || width <= 0 || height % 16 != 0 || width % 16 != 0)
    throw Error(ErrorCode::kConfig, "image size must be a positive multiple of 16");
  if (channels < 1 || latent_dim < 1 || z0_channels < 1 || z1_channels < 1 || condition_dim < 1)
    throw Error(ErrorCode::kConfig, "latent sizes must be positive");
  if (stage_channels.size() != 4) throw Error(ErrorCode::kConfig, "the encoder has exactly four stages");
  if (!(temperature > 0.0)) throw Error(ErrorCode::kConfig, "relaxed-Bernoulli temperature must be positive");
  if (!(scale_min > 0.0)) throw Error(ErrorCode::kConfig, "scale_min must be positive");
}

nlohmann::json VaeConfig::to_json() const {
  return {{"height", height},           {"width", width},
          {"channels", channels},       {"latent_dim", latent_dim},
          {"z1_channels", z1_channels}, {"z0_channels", z0_channels},
          {"stage_channels", stage_channels},
          {"condition_dim", condition_dim},
          {"hidden", hidden},           {"flow_context", flow_context},
          {"temperature", temperature}, {"scale_min", scale_min}};
}

VaeConfig VaeConfig::from_json(const nlohmann::json& j) {
  VaeConfig c;
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.channels = j.value("channels", c.channels);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.z1_channels = j.value("z1_channels", c.z1_channels);
  c.z0_channels = j.value("z0_channels", c.z0_channels);
  c.stage_channels = j.value("stage_channels", c.stage_channels);
  c.condition_dim = j.value("condition_dim", c.condition_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.flow_context = j.value("flow_context", c.flow_context);
  c.temperature = j.value("temperature", c.temperature);
  c.scale_min = j.value("scale_min", c.scale_min);
  c.validate();
  return c;
}

// --- latent primitives -------------------------------------------------------

Tensor sample_binary(const Tensor& logits, double temperature, bool hard, torch::Generator& generator) {
  if (!(temperature > 0.0)) throw Error(ErrorCode::kInvalidArgument, "temperature must be positive");
  auto u = torch::rand(logits.sizes(), generator, logits.options().requires_grad(false))
               .clamp(1e-7, 1.0 - 1e-7);
  auto noise = torch::log(u) - torch::log1p(-u);
  auto soft = torch::sigmoid((logits + noise) / temperature);
  if (!hard) return soft;
  auto hard_values = (soft > 0.5).to(soft.dtype());
  // soft - soft.detach() is exactly zero in value but carries d(soft).
  return hard_values + (soft - soft.detach());
}

Tensor kl_binary(const Tensor& logits) {
  auto q = torch::sigmoid(logits);
  auto kl = q * F::logsigmoid(logits) + (1.0 - q) * F::logsigmoid(-logits) + kLog2;
  kl = kl.clamp_min(0.0);
  if (kl.dim() <= 1) return kl.sum();
  return kl.flatten(1).sum(1);
}

Tensor log_likelihood(const Tensor& x, const DecoderOutput& out) {
  if (x.sizes() != out.loc.sizes() || x.sizes() != out.scale.sizes())
    throw Error(ErrorCode::kInvalidArgument, "likelihood shape mismatch");
  auto lp = -torch::log(2.0 * out.scale) - torch::abs(x - out.loc) / out.scale;
  return lp.flatten(1).sum(1);
}

// --- network -----------------------------------------------------------------

ImageVaeImpl::ImageVaeImpl(VaeConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& ch = config_.stage_channels;
  const int cdim = config_.condition_dim;

  enc_stages_ = register_module("enc_stages", torch::nn::ModuleList());
  int in = config_.channels;
  for (int s = 0; s < 4; ++s) {
    torch::nn::Sequential stage(WNConv2d(in, ch[s], 4, 2, 1), torch::nn::SiLU(),
                                WNConv2d(ch[s], ch[s], 3, 1, 1), torch::nn::SiLU());
    enc_stages_->push_back(stage);
    in = ch[s];
  }
  z0_head_ = register_module("z0_head", WNConv2d(ch[0], config_.z0_channels, 1));
  z1_head_ = register_module("z1_head", WNConv2d(ch[2], config_.z1_channels, 1));
  enc_fc_ = register_module("enc_fc", torch::nn::Linear(config_.pre_latent_features() + cdim, config_.hidden));
  enc_loc_ = register_module("enc_loc", torch::nn::Linear(config_.hidden, config_.latent_dim));
  enc_scale_ = register_module("enc_scale", torch::nn::Linear(config_.hidden, config_.latent_dim));
  enc_context_ = register_module("enc_context", torch::nn::Linear(config_.hidden, config_.flow_context));
  iaf_ = register_module("iaf", AffineIaf(config_.latent_dim, config_.flow_context, 2 * config_.latent_dim));

  dec_fc1_ = register_module("dec_fc1", torch::nn::Linear(config_.latent_dim + cdim, config_.hidden));
  dec_fc2_ = register_module("dec_fc2", torch::nn::Linear(config_.hidden, config_.pre_latent_features()));
  dec_convs_ = register_module("dec_convs", torch::nn::ModuleList());
  dec_se_ = register_module("dec_se", torch::nn::ModuleList());
  // H/16 -> H/8 (+z1) -> H/4 -> H/2 (+z0) -> H
  const int stage_in[4] = {ch[3], ch[3] + config_.z1_channels, ch[2], ch[1] + config_.z0_channels};
  const int stage_out[4] = {ch[3], ch[2], ch[1], ch[0]};
  for (int s = 0; s < 4; ++s) {
    dec_convs_->push_back(WNConv2d(stage_in[s], stage_out[s], 3, 1, 1));
    dec_se_->push_back(SqueezeExcite(cdim, stage_out[s]));
  }
  dec_out_hidden_ = register_module("dec_out_hidden", WNConv2d(ch[0], ch[0], 3, 1, 1));
  dec_out_ = register_module("dec_out", WNConv2d(ch[0], 2 * config_.channels, 1));
}

void ImageVaeImpl::check_input(const Tensor& x, const Tensor& c) const {
  if (x.dim() != 4 || x.size(1) != config_.channels || x.size(2) != config_.height ||
      x.size(3) != config_.width)
    throw Error(ErrorCode::kConfig, "image batch must be [B, " + std::to_string(config_.channels) + ", " +
                                        std::to_string(config_.height) + ", " + std::to_string(config_.width) + "]");
  if (c.dim() != 2 || c.size(0) != x.size(0) || c.size(1) != config_.condition_dim)
    throw Error(ErrorCode::kConfig, "conditioning must be [B, " + std::to_string(config_.condition_dim) + "]");
}

EncoderOutput ImageVaeImpl::encode(const Tensor& x, const Tensor& c) {
  check_input(x, c);
  EncoderOutput out;
  auto h = x;
  for (size_t s = 0; s < enc_stages_->size(); ++s) {
    h = enc_stages_[s]->as<torch::nn::Sequential>()->forward(h);
    if (s == 0) out.z0_logits = z0_head_->forward(h);
    if (s == 2) out.z1_logits = z1_head_->forward(h);
  }
  auto feat = F::silu(enc_fc_->forward(torch::cat({h.flatten(1), c}, 1)));
  out.z2_loc = enc_loc_->forward(feat);
  out.z2_scale = F::softplus(enc_scale_->forward(feat)) + 1e-4;
  out.context = enc_context_->forward(feat);
  return out;
}

std::pair<Tensor, Tensor> ImageVaeImpl::posterior_flow(const Tensor& z2_base, const Tensor& context) {
  return iaf_->forward(z2_base, context);
}

Tensor ImageVaeImpl::posterior_flow_inverse(const Tensor& z2, const Tensor& context) {
  return iaf_->inverse(z2, context);
}

DecoderOutput ImageVaeImpl::decode(const Tensor& z0, const Tensor& z1, const Tensor& z2, const Tensor& c) {
  const auto b = z2.size(0);
  const auto z0s = config_.z0_shape();
  const auto z1s = config_.z1_shape();
  if (z2.dim() != 2 || z2.size(1) != config_.latent_dim || c.dim() != 2 || c.size(0) != b ||
      c.size(1) != config_.condition_dim)
    throw Error(ErrorCode::kConfig, "decoder input z2/c shape mismatch");
  if (z0.dim() != 4 || z0.size(0) != b || z0.size(1) != z0s[0] || z0.size(2) != z0s[1] || z0.size(3) != z0s[2])
    throw Error(ErrorCode::kConfig, "z0 shape mismatch");
  if (z1.dim() != 4 || z1.size(0) != b || z1.size(1) != z1s[0] || z1.size(2) != z1s[1] || z1.size(3) != z1s[2])
    throw Error(ErrorCode::kConfig, "z1 shape mismatch");

  auto h = F::silu(dec_fc1_->forward(torch::cat({z2, c}, 1)));
  h = F::silu(dec_fc2_->forward(h));
  h = h.view({b, config_.stage_channels[3], config_.height / 16, config_.width / 16});
  for (int s = 0; s < 4; ++s) {
    if (s == 1) h = torch::cat({h, z1}, 1);
    if (s == 3) h = torch::cat({h, z0}, 1);
    h = F::silu(dec_convs_[s]->as<WNConv2d>()->forward(h));
    h = dec_se_[s]->as<SqueezeExcite>()->forward(h, c);
    h = upsample2(h);
  }
  h = F::silu(dec_out_hidden_->forward(h));
  auto raw = dec_out_->forward(h);
  DecoderOutput out;
  out.loc = raw.narrow(1, 0, config_.channels);
  out.scale = F::softplus(raw.narrow(1, config_.channels, config_.channels)) + config_.scale_min;
  return out;
}

ImageTerms ImageVaeImpl::evaluate(const Tensor& x, const Tensor& c, torch::Generator& generator) {
  auto enc = encode(x, c);
  auto eps = torch::randn(enc.z2_loc.sizes(), generator, enc.z2_loc.options().requires_grad(false));
  auto z2_base = enc.z2_loc + enc.z2_scale * eps;
  auto [z2, log_det] = posterior_flow(z2_base, enc.context);
  auto z0 = sample_binary(enc.z0_logits, config_.temperature, true, generator);
  auto z1 = sample_binary(enc.z1_logits, config_.temperature, true, generator);

  ImageTerms t;
  t.output = decode(z0, z1, z2, c);
  t.log_likelihood = log_likelihood(x, t.output);
  auto log_q = normal_log_prob(z2_base, enc.z2_loc, enc.z2_scale).sum(1) - log_det;
  auto log_p = (-0.5 * z2 * z2 - kHalfLog2Pi).sum(1);
  t.kl_z2 = log_q - log_p;
  t.kl_z0 = kl_binary(enc.z0_logits);
  t.kl_z1 = kl_binary(enc.z1_logits);
  return t;
}

ImageExogenous ImageVaeImpl::abduct(const Tensor& x, const Tensor& c, AbductionMode mode, uint64_t seed) {
  torch::NoGradGuard guard;
  auto enc = encode(x, c);
  Tensor z2_base, z0, z1;
  if (mode == AbductionMode::kDeterministic) {
    z2_base = enc.z2_loc;
    z0 = (enc.z0_logits > 0.0).to(torch::kFloat32);
    z1 = (enc.z1_logits > 0.0).to(torch::kFloat32);
  } else {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    z2_base = enc.z2_loc + enc.z2_scale * torch::randn(enc.z2_loc.sizes(), gen, enc.z2_loc.options());
    z0 = torch::bernoulli(torch::sigmoid(enc.z0_logits), gen);
    z1 = torch::bernoulli(torch::sigmoid(enc.z1_logits), gen);
  }
  auto [z2, log_det] = posterior_flow(z2_base, enc.context);
  auto out = decode(z0, z1, z2, c);
  ImageExogenous u;
  u.z0 = z0.squeeze(0);
  u.z1 = z1.squeeze(0);
  u.z2 = z2.squeeze(0);
  u.eps = ((x - out.loc) / out.scale).squeeze(0);
  return u;
}

Tensor ImageVaeImpl::reconstruct(const ImageExogenous& u, const Tensor& c) {
  torch::NoGradGuard guard;
  auto out = decode(u.z0.unsqueeze(0), u.z1.unsqueeze(0), u.z2.unsqueeze(0), c);
  return (out.loc + out.scale * u.eps.unsqueeze(0)).squeeze(0);
}

ImageExogenous ImageVaeImpl::sample_prior(uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const auto z0s = config_.z0_shape();
  const auto z1s = config_.z1_shape();
  ImageExogenous u;
  u.z0 = torch::bernoulli(torch::full({z0s[0], z0s[1], z0s[2]}, 0.5), gen);
  u.z1 = torch::bernoulli(torch::full({z1s[0], z1s[1], z1s[2]}, 0.5), gen);
  u.z2 = torch::randn({config_.latent_dim}, gen);
  // Laplace(0, 1) residual via inverse CDF.
  auto v = torch::rand({config_.channels, config_.height, config_.width}, gen).clamp(1e-7, 1.0 - 1e-7) - 0.5;
  u.eps = -torch::sign(v) * torch::log1p(-2.0 * torch::abs(v));
  return u;
}

// --- image <-> tensor ----------------------------------------------------------

Tensor image_to_tensor(const Image& image) {
  auto t = torch::empty({1, image.height, image.width}, torch::kFloat32);
  std::copy(image.pixels.begin(), image.pixels.end(), t.data_ptr<float>());
  return t;
}

Image tensor_to_image(const Tensor& t) {
  auto c = t.detach().to(torch::kFloat32).contiguous();
  if (c.dim() == 3) c = c.select(0, 0);
  if (c.dim() != 2) throw Error(ErrorCode::kInvalidArgument, "expected a single-channel image tensor");
  Image img(static_cast<int>(c.size(0)), static_cast<int>(c.size(1)));
  std::copy(c.data_ptr<float>(), c.data_ptr<float>() + c.numel(), img.pixels.begin());
  return img;
}

// --- mechanism adapter -------------------------------------------------------

VaeImageMechanism::VaeImageMechanism(ImageVae vae, std::vector<flows::Standardizer> condition)
    : vae_(std::move(vae)), condition_(std::move(condition)) {
  if (static_cast<int>(condition_.size()) != vae_->config().condition_dim)
    throw Error(ErrorCode::kConfig, "image parents do not match the VAE conditioning size");
}

Tensor VaeImageMechanism::condition(std::span<const double> parents) const {
  if (parents.size() != condition_.size())
    throw Error(ErrorCode::kInvalidArgument, "image mechanism expects " + std::to_string(condition_.size()) + " parents");
  std::vector<float> c;
  for (size_t j = 0; j < parents.size(); ++j) c.push_back(static_cast<float>(condition_[j](parents[j])));
  return torch::tensor(c).unsqueeze(0);
}

Tensor VaeImageMechanism::condition_batch(const Tensor& parents) const {
  std::vector<Tensor> cols;
  for (size_t j = 0; j < condition_.size(); ++j)
    cols.push_back(condition_[j](parents.select(1, static_cast<int64_t>(j)).to(torch::kFloat64)));
  return torch::stack(cols, 1).to(torch::kFloat32);
}

ImageExogenous VaeImageMechanism::abduct(const Image& image, std::span<const double> parents,
                                         AbductionMode mode, uint64_t seed) const {
  if (image.height != height() || image.width != width())
    throw Error(ErrorCode::kConfig, "image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                                        ", model expects " + std::to_string(height()) + "x" + std::to_string(width()));
  auto x = image_to_tensor(image).unsqueeze(0);
  return vae_.ptr()->abduct(x, condition(parents), mode, seed);
}

Image VaeImageMechanism::forward(const ImageExogenous& u, std::span<const double> parents) const {
  return tensor_to_image(vae_.ptr()->reconstruct(u, condition(parents)));
}

ImageExogenous VaeImageMechanism::sample_exogenous(uint64_t seed) const {
  return vae_.ptr()->sample_prior(seed);
}

}  // namespace dscm::vae
