#include "train/config.h"

#include <cmath>
#include <fstream>

#include "common/error.h"

namespace dscm::train {

using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

// a at w = 0, b at w = 1, both exactly.
double blend(double a, double b, double w) { return a * (1.0 - w) + b * w; }

json schedule_json(const KlSchedule& s) { return {{"start", s.start}, {"end", s.end}, {"duration", s.duration}}; }

KlSchedule schedule_from(const json& j, KlSchedule s) {
  s.start = j.value("start", s.start);
  s.end = j.value("end", s.end);
  s.duration = j.value("duration", s.duration);
  return s;
}

}  // namespace

double KlSchedule::at(double epoch) const {
  if (epoch < 0) throw Error(ErrorCode::kInvalidArgument, "epoch must be non-negative");
  if (duration <= 0 || epoch >= duration) return end;
  return blend(start, end, epoch / duration);
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.preset = "desk";
  c.epochs = 50;
  c.batch_size = 64;
  // 600-epoch ramps do not fit a 50-epoch run
  c.kl_z0.duration = c.kl_z1.duration = c.kl_z2.duration = 15;
  return c;
}

TrainConfig TrainConfig::small128() {
  TrainConfig c;
  c.preset = "small128";
  c.epochs = 2000;
  c.batch_size = 342;
  return c;
}

TrainConfig TrainConfig::large224() {
  TrainConfig c = small128();
  c.preset = "large224";
  c.batch_size = 128;
  c.kl_z1.start = 0.5;
  return c;
}

TrainConfig TrainConfig::preset_named(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "small128") return small128();
  if (name == "large224") return large224();
  throw Error(ErrorCode::kConfig, "unknown training preset '" + name + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorCode::kConfig, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorCode::kConfig, "batch_size must be >= 1");
  if (!(lr_start > 0 && lr_peak > 0 && lr_final > 0)) throw Error(ErrorCode::kConfig, "learning rates must be positive");
  if (!(warm_fraction > 0 && warm_fraction < 1)) throw Error(ErrorCode::kConfig, "warm_fraction must be in (0, 1)");
  if (!(grad_clip_norm > 0)) throw Error(ErrorCode::kConfig, "grad_clip_norm must be positive");
  for (const auto* s : {&kl_z0, &kl_z1, &kl_z2})
    if (!(s->start >= 0 && s->end >= 0 && s->duration >= 0))
      throw Error(ErrorCode::kConfig, "KL schedules must be non-negative");
  if (checkpoint_every < 0) throw Error(ErrorCode::kConfig, "checkpoint_every must be >= 0");
}

json TrainConfig::to_json() const {
  return {{"preset", preset},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"lr_start", lr_start},
          {"lr_peak", lr_peak},
          {"lr_final", lr_final},
          {"warm_fraction", warm_fraction},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"adam_eps", adam_eps},
          {"kl_z0", schedule_json(kl_z0)},
          {"kl_z1", schedule_json(kl_z1)},
          {"kl_z2", schedule_json(kl_z2)},
          {"grad_clip_norm", grad_clip_norm},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  try {
    TrainConfig c = preset_named(j.value("preset", std::string("desk")));
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_start = j.value("lr_start", c.lr_start);
    c.lr_peak = j.value("lr_peak", c.lr_peak);
    c.lr_final = j.value("lr_final", c.lr_final);
    c.warm_fraction = j.value("warm_fraction", c.warm_fraction);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    if (j.contains("kl_z0")) c.kl_z0 = schedule_from(j.at("kl_z0"), c.kl_z0);
    if (j.contains("kl_z1")) c.kl_z1 = schedule_from(j.at("kl_z1"), c.kl_z1);
    if (j.contains("kl_z2")) c.kl_z2 = schedule_from(j.at("kl_z2"), c.kl_z2);
    c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("malformed training config: ") + e.what());
  }
}

TrainConfig TrainConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open training config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, "training config '" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

double one_cycle_lr(int64_t step, int64_t total_steps, const TrainConfig& c) {
  if (total_steps <= 0 || step < 0 || step > total_steps)
    throw Error(ErrorCode::kInvalidArgument, "one_cycle_lr needs 0 <= step <= total_steps");
  const double warm = c.warm_fraction * static_cast<double>(total_steps);
  const double s = static_cast<double>(step);
  if (s <= warm) {
    const double t = s / warm;
    return blend(c.lr_start, c.lr_peak, 0.5 * (1.0 - std::cos(kPi * t)));
  }
  const double t = (s - warm) / (static_cast<double>(total_steps) - warm);
  return blend(c.lr_final, c.lr_peak, 0.5 * (1.0 + std::cos(kPi * t)));
}

}  // namespace dscm::train
