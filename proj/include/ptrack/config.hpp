#pragma once

// Run configuration: one flat JSON document covering the model architecture,
// the loss weights, and the training loop. Every key has a default, unknown
// keys are rejected, and the architecture-determining subset is hashed so a
// checkpoint can refuse to load into a different network.

#include <string>

#include "json.hpp"
#include "ptrack/losses.hpp"
#include "ptrack/refiner.hpp"

namespace ptrack {

struct TrainConfig {
  ModelConfig model;  // desk-scale by default, see TrainConfig()
  LossConfig loss;
  int batch = 2;
  int steps = 2000;
  double lr_max = 2e-4;
  int n_queries = 16;  // queries sampled per sequence ("N")
  std::uint64_t seed = 1;
  double weight_decay = 1e-5;
  double clip_norm = 1.0;
  int checkpoint_every = 500;
  double warmup_frac = 0.05;  // one-cycle linear warmup fraction
  double final_div = 25.0;    // final lr = lr_max / final_div

  TrainConfig();  // applies the desk-scale model overrides
};

// Defaults sized for a single CPU core.
TrainConfig desk_config();

// Full-scale reference settings (not runnable on a desk machine).
TrainConfig paper_config();

void validate(const ModelConfig& cfg);
void validate(const TrainConfig& cfg);

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::string& path);

// FNV-1a over the format version and the architecture-determining fields,
// as 16 hex digits. Training hyperparameters do not affect it.
std::string config_hash(const ModelConfig& cfg);

}  // namespace ptrack
