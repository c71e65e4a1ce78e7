#pragma once

// Training loop: sampled sequence windows with flip augmentation, batched
// query supervision, decoupled-weight-decay optimizer under a one-cycle
// learning-rate schedule, JSON-lines logging, and periodic checkpoints.

#include <string>

#include "ptrack/config.hpp"

namespace ptrack {

struct TrainResult {
  std::string final_checkpoint;
  int steps_run = 0;
};

// Trains on every sequence directory under data_dir; writes
// train_log.jsonl, periodic ckpt_step_*.json, and ckpt_final.json under
// out_dir. Progress goes to stderr unless quiet.
TrainResult train(const TrainConfig& cfg, const std::string& data_dir,
                  const std::string& out_dir, bool quiet = false);

}  // namespace ptrack
