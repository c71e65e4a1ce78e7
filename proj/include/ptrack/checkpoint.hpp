#pragma once

// Checkpoints: a JSON manifest (run config, architecture hash, and one entry
// per parameter tensor with shape and offset) next to a raw little-endian
// float32 blob holding all parameters in registration order. Loading refuses
// manifests whose architecture hash does not match the code's own hash of
// the embedded config.

#include <string>

#include "ptrack/config.hpp"
#include "ptrack/nn.hpp"

namespace ptrack {

// Writes `path` (the manifest) and a sibling blob with extension ".bin".
void save_checkpoint(const std::string& path, const ParamStore<float>& params,
                     const TrainConfig& cfg);

// Reads only the embedded config, verifying the architecture hash.
TrainConfig checkpoint_config(const std::string& path);

// Copies the blob into an existing store built from the same architecture.
void load_checkpoint_params(const std::string& path,
                            ParamStore<float>& params);

}  // namespace ptrack
