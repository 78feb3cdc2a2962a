#include "testing.h"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "common/error.h"
#include "phantom/phantom.h"
#include "scm/model.h"
#include "train/checkpoint.h"
#include "train/config.h"
#include "train/data.h"
#include "train/objective.h"
#include "train/trainer.h"

using namespace dscm;
using namespace dscm::train;
namespace fs = std::filesystem;

namespace {

const TrainingData& phantom_data() {
  static const TrainingData data = [] {
    return TrainingData::from_phantoms(phantom::generate_phantoms(48, phantom::PhantomConfig{}, 5));
  }();
  return data;
}

std::unique_ptr<scm::DeepScm> fresh_model(uint64_t seed = 3) {
  torch::manual_seed(seed);
  auto spec = GraphSpec::multiple_sclerosis();
  return std::make_unique<scm::DeepScm>(spec, scm::fit_bases(spec, phantom_data().records()),
                                        vae::VaeConfig::desk());
}

TrainConfig tiny_config() {
  auto c = TrainConfig::desk();
  c.epochs = 6;
  c.batch_size = 16;
  c.lr_start = 1e-4;
  c.lr_peak = 2e-3;
  c.checkpoint_every = 1;
  return c;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("dscm_train_" + name);
  fs::remove_all(p);
  return p;
}

double max_abs_diff(const scm::DeepScm& a, const scm::DeepScm& b) {
  auto pa = a.named_parameters(), pb = b.named_parameters();
  REQUIRE(pa.size() == pb.size());
  double worst = 0;
  for (size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].first == pb[i].first);
    worst = std::max(worst, (pa[i].second - pb[i].second).abs().max().item<double>());
  }
  return worst;
}

}  // namespace

TEST_CASE("learning-rate schedule hits its endpoints exactly") {
  const auto c = TrainConfig::desk();
  const int64_t total = 1000;
  CHECK(one_cycle_lr(0, total, c) == 2e-5);
  CHECK(one_cycle_lr(100, total, c) == 5e-4);
  CHECK(one_cycle_lr(total, total, c) == 5e-8);
  double prev = 0;
  for (int64_t s = 0; s <= 100; ++s) {
    const double lr = one_cycle_lr(s, total, c);
    CHECK(lr >= prev);
    prev = lr;
  }
  for (int64_t s = 101; s <= total; ++s) {
    const double lr = one_cycle_lr(s, total, c);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK_THROWS_AS(one_cycle_lr(total + 1, total, c), Error);
  CHECK_THROWS_AS(one_cycle_lr(-1, total, c), Error);
}

TEST_CASE("KL schedules follow the presets") {
  const auto s = TrainConfig::small128();
  CHECK(s.batch_size == 342);
  CHECK(s.epochs == 2000);
  CHECK(s.kl_z2.at(0) == 0.0);
  CHECK(s.kl_z2.at(300) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s.kl_z2.at(600) == 1.0);
  CHECK(s.kl_z2.at(1500) == 1.0);
  CHECK(s.kl_z0.at(0) == 1.0);
  CHECK(s.kl_z0.at(600) == 4.4);
  CHECK(s.kl_z1.at(0) == 1.0);
  CHECK(s.kl_z1.at(600) == 1.1);

  const auto l = TrainConfig::large224();
  CHECK(l.batch_size == 128);
  CHECK(l.kl_z1.at(0) == 0.5);
  CHECK(l.kl_z1.at(600) == 1.1);

  const auto d = TrainConfig::desk();
  CHECK(d.kl_z2.at(0) == 0.0);
  CHECK(d.kl_z2.at(15) == 1.0);
  CHECK(d.kl_z0.at(50) == 4.4);
  CHECK_THROWS_AS(d.kl_z0.at(-1), Error);
  CHECK_THROWS_AS(TrainConfig::preset_named("huge"), Error);

  auto j = s.to_json();
  auto back = TrainConfig::from_json(j);
  CHECK(back.to_json() == j);
  j["batch_size"] = 0;
  CHECK_THROWS_AS(TrainConfig::from_json(j), Error);
}

TEST_CASE("gradient clipping matches a float64 oracle") {
  std::mt19937_64 rng(9);
  std::lognormal_distribution<double> mag(0.0, 2.0);
  std::normal_distribution<double> z;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<torch::Tensor> params;
    std::vector<std::vector<double>> raw;
    const double m = mag(rng);
    double sq = 0;
    for (int k = 0; k < 3; ++k) {
      std::vector<double> g(static_cast<size_t>(1 + k * 4));
      for (auto& x : g) {
        x = m * z(rng);
        sq += x * x;
      }
      auto p = torch::zeros({static_cast<int64_t>(g.size())}, torch::kFloat64).requires_grad_();
      p.mutable_grad() = torch::tensor(g, torch::kFloat64);
      params.push_back(p);
      raw.push_back(g);
    }
    const double norm = std::sqrt(sq);
    const double reported = clip_gradient_norm(params, 100.0);
    REQUIRE(reported == doctest::Approx(norm).epsilon(1e-12));
    const double factor = norm > 100.0 ? 100.0 / norm : 1.0;
    double after = 0;
    for (size_t k = 0; k < params.size(); ++k) {
      auto g = params[k].grad();
      for (size_t i = 0; i < raw[k].size(); ++i) {
        const double v = g[static_cast<int64_t>(i)].item<double>();
        REQUIRE(v == doctest::Approx(raw[k][i] * factor).epsilon(1e-12));
        after += v * v;
      }
    }
    REQUIRE(std::sqrt(after) <= 100.0 * (1 + 1e-12));
  }

  auto p = torch::zeros({2}, torch::kFloat64).requires_grad_();
  p.mutable_grad() = torch::tensor({120.0, 160.0}, torch::kFloat64);  // norm 200
  CHECK(clip_gradient_norm({p}, 100.0) == doctest::Approx(200.0));
  CHECK(p.grad()[0].item<double>() == doctest::Approx(60.0));
  CHECK(p.grad()[1].item<double>() == doctest::Approx(80.0));
  p.mutable_grad() = torch::tensor({30.0, 40.0}, torch::kFloat64);  // norm 50
  CHECK(clip_gradient_norm({p}, 100.0) == doctest::Approx(50.0));
  CHECK(p.grad()[0].item<double>() == 30.0);
  p.mutable_grad() = torch::tensor({std::nan(""), 1.0}, torch::kFloat64);
  CHECK_THROWS_AS(clip_gradient_norm({p}, 100.0), Error);
}

TEST_CASE("ELBO components add up") {
  auto model = fresh_model();
  const auto batch = phantom_data().range(0, 8);
  auto run = [&](KlWeights w) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(11);
    return elbo(*model, batch, w, gen).components;
  };
  const auto zero = run({0, 0, 0});
  const auto ones = run({1, 1, 1});
  const auto mixed = run({4.4, 1.1, 0.3});

  double nll = 0;
  for (const auto& name : model->covariates()) nll += zero.at("nll_" + name);
  CHECK(model->covariates().size() == 8);
  CHECK(zero.at("loss") == doctest::Approx(nll - zero.at("log_likelihood")).epsilon(1e-6));
  CHECK(ones.at("loss") == doctest::Approx(-ones.at("elbo")).epsilon(1e-6));
  CHECK(zero.at("elbo") == doctest::Approx(ones.at("elbo")).epsilon(1e-9));
  const double expect = nll - mixed.at("log_likelihood") + 4.4 * mixed.at("kl_z0") + 1.1 * mixed.at("kl_z1") +
                        0.3 * mixed.at("kl_z2");
  CHECK(mixed.at("loss") == doctest::Approx(expect).epsilon(1e-6));
  CHECK(zero.at("kl_z0") >= 0.0);
  CHECK(zero.at("kl_z1") >= 0.0);

  // without dequantization noise the integer covariates sit at cell midpoints
  auto gen = at::make_generator<at::CPUGeneratorImpl>(1);
  auto det = elbo(*model, batch, {1, 1, 1}, gen, false).components;
  auto gen2 = at::make_generator<at::CPUGeneratorImpl>(2);
  auto det2 = elbo(*model, batch, {1, 1, 1}, gen2, false).components;
  CHECK(det.at("nll_e") == det2.at("nll_e"));
  CHECK(det.at("nll_n") == det2.at("nll_n"));
}

TEST_CASE("every parameter receives a finite, nonzero gradient") {
  auto model = fresh_model();
  auto gen = at::make_generator<at::CPUGeneratorImpl>(4);
  auto r = elbo(*model, phantom_data().range(0, 16), {1, 1, 1}, gen);
  r.loss.backward();
  int checked = 0;
  for (const auto& [name, p] : model->named_parameters()) {
    INFO(name);
    REQUIRE(p.grad().defined());
    const double n = p.grad().norm().item<double>();
    CHECK(std::isfinite(n));
    CHECK(n > 0.0);
    ++checked;
  }
  CHECK(checked == static_cast<int>(model->named_parameters().size()));
}

TEST_CASE("non-finite loss reports divergence with its components") {
  auto model = fresh_model();
  auto batch = phantom_data().range(0, 4);
  batch.images[0][0][0][0] = std::nanf("");
  auto gen = at::make_generator<at::CPUGeneratorImpl>(4);
  try {
    elbo(*model, batch, {1, 1, 1}, gen);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kTrainingDivergence);
    CHECK(std::string(e.what()).find("log_likelihood") != std::string::npos);
  }
}

TEST_CASE("checkpoints round-trip byte for byte and reproduce the loss") {
  auto model = fresh_model();
  Trainer trainer(*model, tiny_config());
  trainer.run_epoch(phantom_data());
  const auto bytes = encode_checkpoint(*model, trainer.state(), &trainer.optimizer());
  auto ck = decode_checkpoint(bytes);
  CHECK(encode_checkpoint(*ck.model, ck.state, nullptr).size() < bytes.size());
  torch::optim::Adam opt(ck.model->parameters(), torch::optim::AdamOptions(1e-3));
  restore_optimizer(opt, *ck.model, ck);
  CHECK(encode_checkpoint(*ck.model, ck.state, &opt) == bytes);
  CHECK(max_abs_diff(*model, *ck.model) == 0.0);
  CHECK(ck.state.epoch == 1);
  CHECK(ck.state.step == 3);

  const auto batch = phantom_data().range(0, 8);
  auto g1 = at::make_generator<at::CPUGeneratorImpl>(21);
  auto g2 = at::make_generator<at::CPUGeneratorImpl>(21);
  const double l1 = elbo(*model, batch, {1, 1, 1}, g1).components.at("loss");
  const double l2 = elbo(*ck.model, batch, {1, 1, 1}, g2).components.at("loss");
  CHECK(std::abs(l1 - l2) <= 1e-6 * std::max(1.0, std::abs(l1)));

  auto broken = bytes;
  broken.resize(broken.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(broken), Error);
  broken = bytes;
  broken[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(broken), Error);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt"), Error);
}

TEST_CASE("short training lowers the loss and resuming matches an uninterrupted run") {
  const auto& data = phantom_data();
  const auto dir = scratch("full");
  auto full = fresh_model();
  Trainer t_full(*full, tiny_config(), {dir.string(), nullptr});
  const auto history = t_full.fit(data);
  REQUIRE(history.size() == 6);
  CHECK(history.back().components.at("loss") < history.front().components.at("loss"));
  CHECK(history.back().step == 18);
  CHECK(fs::exists(dir / "metrics.csv"));
  CHECK(fs::exists(dir / "checkpoints" / "epoch_0006.ckpt"));
  CHECK(t_full.latest_checkpoint() == (dir / "checkpoints" / "latest.ckpt").string());
  {
    std::ifstream f(dir / "metrics.csv");
    std::string line;
    int lines = 0;
    std::getline(f, line);
    CHECK(line.rfind("epoch,step,elbo,kl_z0", 0) == 0);
    while (std::getline(f, line)) ++lines;
    CHECK(lines == 6);
  }

  const auto split = scratch("split");
  auto first = fresh_model();
  Trainer t_first(*first, tiny_config(), {split.string(), nullptr});
  t_first.fit(data, 3);
  CHECK(t_first.state().epoch == 3);
  auto ck = load_checkpoint((split / "checkpoints" / "latest.ckpt").string());
  Trainer t_resumed(*ck.model, tiny_config(), {split.string(), nullptr});
  t_resumed.resume(ck);
  t_resumed.fit(data);
  CHECK(t_resumed.state().epoch == 6);
  CHECK(max_abs_diff(*full, *ck.model) <= 1e-6);
  fs::remove_all(dir);
  fs::remove_all(split);
}
