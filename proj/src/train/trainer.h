#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "scm/model.h"
#include "train/checkpoint.h"
#include "train/config.h"
#include "train/data.h"
#include "train/objective.h"

namespace dscm::train {

struct EpochMetrics {
  int epoch = 0;  // 1-based, the epoch just finished
  int64_t step = 0;
  double lr = 0.0;  // at the last step of the epoch
  KlWeights kl;
  double grad_norm = 0.0;  // largest pre-clip norm seen this epoch
  double seconds = 0.0;
  std::map<std::string, double> components;  // record-weighted epoch means
};

struct TrainerOptions {
  // Empty: nothing is written. Otherwise metrics.csv, checkpoints/epoch_NNNN.ckpt
  // and checkpoints/latest.ckpt go here.
  std::string output_dir;
  std::function<void(const EpochMetrics&)> on_epoch;
};

class Trainer {
 public:
  Trainer(scm::DeepScm& model, TrainConfig config, TrainerOptions options = {});

  // Continues from a checkpoint of the same model (parameters must already be
  // loaded into `model`, e.g. the checkpoint's own model).
  void resume(const Checkpoint& checkpoint);

  // Runs epochs until config.epochs (or `max_epochs` more, if smaller).
  // A divergence throws kTrainingDivergence naming the last good checkpoint.
  std::vector<EpochMetrics> fit(const TrainingData& data, int max_epochs = -1);
  EpochMetrics run_epoch(const TrainingData& data);

  const TrainState& state() const { return state_; }
  const TrainConfig& config() const { return state_.config; }
  torch::optim::Adam& optimizer() { return *optimizer_; }
  std::string latest_checkpoint() const;
  void save(const std::string& path) const;

 private:
  int64_t steps_per_epoch(const TrainingData& data) const;
  void append_metrics(const EpochMetrics& m);

  scm::DeepScm& model_;
  TrainerOptions options_;
  TrainState state_;
  std::vector<torch::Tensor> params_;
  std::unique_ptr<torch::optim::Adam> optimizer_;
};

}  // namespace dscm::train
