#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

namespace dscm::train {

// Linear ramp from start to end over `duration` epochs, constant afterwards.
struct KlSchedule {
  double start = 1.0;
  double end = 1.0;
  double duration = 600.0;

  double at(double epoch) const;
};

struct TrainConfig {
  std::string preset = "desk";
  int epochs = 50;
  int batch_size = 64;
  double lr_start = 2e-5;
  double lr_peak = 5e-4;
  double lr_final = 5e-8;
  double warm_fraction = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  KlSchedule kl_z0{1.0, 4.4, 600};
  KlSchedule kl_z1{1.0, 1.1, 600};
  KlSchedule kl_z2{0.0, 1.0, 600};
  double grad_clip_norm = 100.0;
  uint64_t seed = 1;
  int checkpoint_every = 10;  // epochs; 0 disables periodic checkpoints

  static TrainConfig desk();      // 64 x 64, 50 epochs, batch 64
  static TrainConfig small128();  // batch 342
  static TrainConfig large224();  // batch 128, z1 KL starts at 0.5
  static TrainConfig preset_named(const std::string& name);

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig from_file(const std::string& path);
};

// Cosine one-cycle: lr_start -> lr_peak over the first warm_fraction of
// steps, then lr_peak -> lr_final at total_steps. Endpoints are exact.
double one_cycle_lr(int64_t step, int64_t total_steps, const TrainConfig& config);

}  // namespace dscm::train
