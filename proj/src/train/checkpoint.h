#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "scm/model.h"
#include "train/config.h"

namespace dscm::train {

struct TrainState {
  int epoch = 0;      // completed epochs
  int64_t step = 0;   // completed optimizer steps
  TrainConfig config;
  nlohmann::json last_metrics = nlohmann::json::object();
};

struct AdamMoments {
  int64_t step = 0;
  torch::Tensor exp_avg;
  torch::Tensor exp_avg_sq;
};

struct Checkpoint {
  std::unique_ptr<scm::DeepScm> model;
  TrainState state;
  std::map<std::string, AdamMoments> optimizer;  // keyed like named_parameters()
};

// Binary layout: "DSCMCKPT", u32 version, u64 header size, JSON header
// (graph, bases, VAE config, train state, tensor table), raw tensor bytes in
// table order, "DSCM-END". Output is a pure function of the inputs.
std::vector<uint8_t> encode_checkpoint(const scm::DeepScm& model, const TrainState& state,
                                       const torch::optim::Adam* optimizer = nullptr);
Checkpoint decode_checkpoint(const std::vector<uint8_t>& bytes);

void save_checkpoint(const std::string& path, const scm::DeepScm& model, const TrainState& state,
                     const torch::optim::Adam* optimizer = nullptr);
Checkpoint load_checkpoint(const std::string& path);

// Installs saved moments for the model's parameters into a fresh optimizer
// built over model.parameters().
void restore_optimizer(torch::optim::Adam& optimizer, const scm::DeepScm& model, const Checkpoint& checkpoint);

}  // namespace dscm::train
