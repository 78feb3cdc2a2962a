#include "train/trainer.h"

#include <ATen/CPUGeneratorImpl.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "common/error.h"

namespace dscm::train {

namespace fs = std::filesystem;

namespace {

uint64_t epoch_seed(uint64_t seed, int epoch) {
  // splitmix64 finalizer over (seed, epoch)
  uint64_t z = seed * 0x9E3779B97F4A7C15ULL + static_cast<uint64_t>(epoch) + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

Trainer::Trainer(scm::DeepScm& model, TrainConfig config, TrainerOptions options)
    : model_(model), options_(std::move(options)) {
  config.validate();
  state_.config = std::move(config);
  params_ = model_.parameters();
  if (params_.empty()) throw Error(ErrorCode::kConfig, "model has no trainable parameters");
  const auto& c = state_.config;
  optimizer_ = std::make_unique<torch::optim::Adam>(
      params_, torch::optim::AdamOptions(c.lr_start).betas({c.adam_beta1, c.adam_beta2}).eps(c.adam_eps));
}

void Trainer::resume(const Checkpoint& checkpoint) {
  state_ = checkpoint.state;
  state_.config.validate();
  restore_optimizer(*optimizer_, model_, checkpoint);
}

int64_t Trainer::steps_per_epoch(const TrainingData& data) const {
  const int64_t b = state_.config.batch_size;
  return (data.size() + b - 1) / b;
}

std::string Trainer::latest_checkpoint() const {
  if (options_.output_dir.empty()) return {};
  auto p = fs::path(options_.output_dir) / "checkpoints" / "latest.ckpt";
  return fs::exists(p) ? p.string() : std::string{};
}

void Trainer::save(const std::string& path) const { save_checkpoint(path, model_, state_, optimizer_.get()); }

EpochMetrics Trainer::run_epoch(const TrainingData& data) {
  if (data.size() == 0) throw Error(ErrorCode::kInvalidArgument, "no training records");
  if (model_.has_image() && !data.has_images())
    throw Error(ErrorCode::kInvalidArgument, "training data has no images");
  const auto& cfg = state_.config;
  const int epoch = state_.epoch;  // 0-based index of the epoch being run
  const int64_t per_epoch = steps_per_epoch(data);
  const int64_t total = per_epoch * cfg.epochs;
  const KlWeights kl{cfg.kl_z0.at(epoch), cfg.kl_z1.at(epoch), cfg.kl_z2.at(epoch)};

  auto gen = at::make_generator<at::CPUGeneratorImpl>(epoch_seed(cfg.seed, epoch));
  const auto order = torch::randperm(data.size(), gen, torch::kLong);

  EpochMetrics m;
  m.epoch = epoch + 1;
  m.kl = kl;
  const auto t0 = std::chrono::steady_clock::now();
  model_.train(true);
  for (int64_t b = 0; b < per_epoch; ++b) {
    const int64_t lo = b * cfg.batch_size, hi = std::min(data.size(), lo + cfg.batch_size);
    const auto batch = data.subset(order.slice(0, lo, hi));
    const double lr = one_cycle_lr(std::min(state_.step, total), total, cfg);
    for (auto& group : optimizer_->param_groups())
      static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);

    optimizer_->zero_grad();
    auto result = elbo(model_, batch, kl, gen, true);
    result.loss.backward();
    const double norm = clip_gradient_norm(params_, cfg.grad_clip_norm);
    optimizer_->step();
    ++state_.step;

    m.lr = lr;
    m.grad_norm = std::max(m.grad_norm, norm);
    const double w = static_cast<double>(hi - lo) / static_cast<double>(data.size());
    for (const auto& [k, v] : result.components) m.components[k] += w * v;
  }
  model_.train(false);
  m.step = state_.step;
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ++state_.epoch;
  state_.last_metrics = m.components;
  return m;
}

void Trainer::append_metrics(const EpochMetrics& m) {
  if (options_.output_dir.empty()) return;
  const auto path = fs::path(options_.output_dir) / "metrics.csv";
  const bool fresh = !fs::exists(path);
  std::ofstream f(path, std::ios::app);
  if (!f) throw Error(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  if (fresh) {
    f << "epoch,step";
    for (const auto& [k, v] : m.components) f << ',' << k;
    f << ",lr,lambda_z0,lambda_z1,lambda_z2,grad_norm,seconds\n";
  }
  char buf[64];
  f << m.epoch << ',' << m.step;
  for (const auto& [k, v] : m.components) {
    std::snprintf(buf, sizeof buf, ",%.9g", v);
    f << buf;
  }
  std::snprintf(buf, sizeof buf, ",%.6g", m.lr);
  f << buf << ',' << m.kl.z0 << ',' << m.kl.z1 << ',' << m.kl.z2;
  std::snprintf(buf, sizeof buf, ",%.6g,%.3f\n", m.grad_norm, m.seconds);
  f << buf;
}

std::vector<EpochMetrics> Trainer::fit(const TrainingData& data, int max_epochs) {
  std::vector<EpochMetrics> out;
  const auto& cfg = state_.config;
  if (!options_.output_dir.empty()) fs::create_directories(fs::path(options_.output_dir) / "checkpoints");
  int remaining = cfg.epochs - state_.epoch;
  if (max_epochs >= 0) remaining = std::min(remaining, max_epochs);
  for (int i = 0; i < remaining; ++i) {
    EpochMetrics m;
    try {
      m = run_epoch(data);
    } catch (const Error& e) {
      model_.train(false);
      if (e.code() != ErrorCode::kTrainingDivergence) throw;
      const auto last = latest_checkpoint();
      throw Error(ErrorCode::kTrainingDivergence,
                  std::string(e.what()) + " at epoch " + std::to_string(state_.epoch + 1) +
                      "; last good checkpoint: " + (last.empty() ? "none" : last));
    }
    append_metrics(m);
    if (!options_.output_dir.empty()) {
      const auto dir = fs::path(options_.output_dir) / "checkpoints";
      const bool last = state_.epoch == cfg.epochs;
      if ((cfg.checkpoint_every > 0 && state_.epoch % cfg.checkpoint_every == 0) || last) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%04d.ckpt", state_.epoch);
        save((dir / name).string());
        save((dir / "latest.ckpt").string());
      }
    }
    if (options_.on_epoch) options_.on_epoch(m);
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace dscm::train
