#pragma once

// Synthetic tracking sequences with exact ground truth, and the on-disk
// dataset format. A sequence is a value-noise background plus z-ordered
// textured disk sprites moving under per-frame similarity transforms
// (translation, rotation, scale). Track points ride sprite or background
// material points, so their coordinates and occlusion flags follow
// analytically from the transforms.
//
// Directory layout per sequence: frames.bin (raw 8-bit RGB, frame-major),
// tracks.bin (little-endian float32, [n, t, 2] as x, y pixels),
// visibility.bin (1 byte per flag, [n, t]), meta.json (shapes and config).

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "ptrack/common.hpp"

namespace ptrack {

struct SeqConfig {
  int t = 8;
  int h = 128;
  int w = 128;
  int sprites_min = 2;
  int sprites_max = 4;
  int n_tracks = 32;
  double motion = 2.0;         // translation scale, px/frame
  double spin = 1.0;           // rotation-rate multiplier
  double zoom = 1.0;           // scale-drift multiplier
  double texture_scale = 6.0;  // noise feature size, px
  // Every sprite translates by exactly (motion, 0) px/frame with no rotation
  // or scaling; background tracks stay put.
  bool uniform_translation = false;
};

void validate(const SeqConfig& cfg);

struct Sequence {
  int t = 0, h = 0, w = 0, n_tracks = 0;
  std::vector<unsigned char> frames;  // [t, 3, h, w]
  std::vector<float> tracks;          // [n, t, 2]
  std::vector<unsigned char> vis;     // [n, t]
  std::uint64_t seed = 0;
  SeqConfig config;

  std::size_t frame_bytes() const { return std::size_t(3) * h * w; }
  const unsigned char* frame(int i) const {
    return frames.data() + std::size_t(i) * frame_bytes();
  }
};

bool operator==(const Sequence& a, const Sequence& b);

// Deterministic in seed and config; every emitted track has at least one
// visible frame. Throws DataError if the config leaves no track visible.
Sequence generate(std::uint64_t seed, const SeqConfig& cfg);

nlohmann::json to_json(const SeqConfig& cfg);
SeqConfig seq_config_from_json(const nlohmann::json& j);

void save_sequence(const Sequence& seq, const std::string& dir);
Sequence load_sequence(const std::string& dir);

// Sorted names of subdirectories holding a meta.json.
std::vector<std::string> list_sequence_dirs(const std::string& root);

// Mirrors frames and tracks together; visibility is unchanged.
Sequence flip_sequence(const Sequence& seq, bool horizontal, bool vertical);

// Predictions use the same tracks/visibility layout next to a meta.json
// describing shapes only.
void save_predictions(const std::string& dir, int n, int t,
                      const std::vector<float>& tracks,
                      const std::vector<unsigned char>& vis);
void load_predictions(const std::string& dir, int* n, int* t,
                      std::vector<float>* tracks,
                      std::vector<unsigned char>* vis);

}  // namespace ptrack
