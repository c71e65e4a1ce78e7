#include "ptrack/config.hpp"

#include <fstream>
#include <set>

namespace ptrack {

TrainConfig::TrainConfig() {
  model.channels = 64;
  model.mixer_depth = 3;
  model.mixer_hidden = 256;
  model.attn_dim = 64;
}

TrainConfig desk_config() { return TrainConfig(); }

TrainConfig paper_config() {
  TrainConfig cfg;
  cfg.model.channels = 128;
  cfg.model.mixer_depth = 12;
  cfg.model.mixer_hidden = 512;
  cfg.model.attn_dim = 128;
  cfg.batch = 4;
  cfg.steps = 100000;
  cfg.lr_max = 5e-4;
  cfg.n_queries = 128;
  return cfg;
}

void validate(const ModelConfig& cfg) {
  auto bad = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (cfg.t_window < 2) bad("T must be at least 2");
  if (cfg.channels < 4 || cfg.channels % 4 != 0)
    bad("channels must be a positive multiple of 4");
  if (cfg.stride != 8) bad("the feature extractor is fixed at stride 8");
  if (cfg.levels < 1) bad("levels must be positive");
  if (cfg.crop_radius < 0) bad("crop_radius must be non-negative");
  if (cfg.aux_samples < 1) bad("aux_samples must be positive");
  if (cfg.self_sim_radius < 0) bad("self_sim_radius must be non-negative");
  if (cfg.attn_radius < 0) bad("attn_radius must be non-negative");
  if (cfg.attn_dim < 1) bad("attn_dim must be positive");
  if (cfg.mixer_depth < 1) bad("mixer_depth must be positive");
  if (cfg.mixer_hidden < 1) bad("mixer_hidden must be positive");
  if (cfg.iters_train < 1) bad("K must be positive");
}

void validate(const TrainConfig& cfg) {
  validate(cfg.model);
  try {
    validate(cfg.loss);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  auto bad = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (cfg.batch < 1) bad("batch must be positive");
  if (cfg.steps < 1) bad("steps must be positive");
  if (!(cfg.lr_max > 0.0)) bad("lr_max must be positive");
  if (cfg.n_queries < 1) bad("N must be positive");
  if (!(cfg.weight_decay >= 0.0)) bad("weight_decay must be non-negative");
  if (!(cfg.clip_norm >= 0.0)) bad("clip_norm must be non-negative");
  if (cfg.checkpoint_every < 1) bad("checkpoint_every must be positive");
  if (!(cfg.warmup_frac >= 0.0 && cfg.warmup_frac < 1.0))
    bad("warmup_frac must lie in [0, 1)");
  if (!(cfg.final_div >= 1.0)) bad("final_div must be at least 1");
}

nlohmann::json to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["T"] = cfg.model.t_window;
  j["K"] = cfg.model.iters_train;
  j["channels"] = cfg.model.channels;
  j["levels"] = cfg.model.levels;
  j["crop_radius"] = cfg.model.crop_radius;
  j["aux_samples"] = cfg.model.aux_samples;
  j["self_sim_radius"] = cfg.model.self_sim_radius;
  j["attn_radius"] = cfg.model.attn_radius;
  j["attn_dim"] = cfg.model.attn_dim;
  j["mixer_depth"] = cfg.model.mixer_depth;
  j["mixer_hidden"] = cfg.model.mixer_hidden;
  j["enable_sofe"] = cfg.model.enable_sofe;
  j["enable_tafa"] = cfg.model.enable_tafa;
  j["gamma"] = cfg.loss.gamma;
  j["w_traj"] = cfg.loss.w_traj;
  j["w_vis"] = cfg.loss.w_vis;
  j["batch"] = cfg.batch;
  j["steps"] = cfg.steps;
  j["lr_max"] = cfg.lr_max;
  j["N"] = cfg.n_queries;
  j["seed"] = cfg.seed;
  j["weight_decay"] = cfg.weight_decay;
  j["clip_norm"] = cfg.clip_norm;
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["warmup_frac"] = cfg.warmup_frac;
  j["final_div"] = cfg.final_div;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "T",          "K",           "channels",      "levels",
      "crop_radius", "aux_samples", "self_sim_radius", "attn_radius",
      "attn_dim",   "mixer_depth", "mixer_hidden",  "enable_sofe",
      "enable_tafa", "gamma",      "w_traj",        "w_vis",
      "batch",      "steps",       "lr_max",        "N",
      "seed",       "weight_decay", "clip_norm",    "checkpoint_every",
      "warmup_frac", "final_div"};
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  for (const auto& item : j.items())
    if (known.find(item.key()) == known.end())
      throw ConfigError("config: unknown key '" + item.key() + "'");
  TrainConfig cfg;
  try {
    cfg.model.t_window = j.value("T", cfg.model.t_window);
    cfg.model.iters_train = j.value("K", cfg.model.iters_train);
    cfg.model.channels = j.value("channels", cfg.model.channels);
    cfg.model.levels = j.value("levels", cfg.model.levels);
    cfg.model.crop_radius = j.value("crop_radius", cfg.model.crop_radius);
    cfg.model.aux_samples = j.value("aux_samples", cfg.model.aux_samples);
    cfg.model.self_sim_radius =
        j.value("self_sim_radius", cfg.model.self_sim_radius);
    cfg.model.attn_radius = j.value("attn_radius", cfg.model.attn_radius);
    cfg.model.attn_dim = j.value("attn_dim", cfg.model.attn_dim);
    cfg.model.mixer_depth = j.value("mixer_depth", cfg.model.mixer_depth);
    cfg.model.mixer_hidden = j.value("mixer_hidden", cfg.model.mixer_hidden);
    cfg.model.enable_sofe = j.value("enable_sofe", cfg.model.enable_sofe);
    cfg.model.enable_tafa = j.value("enable_tafa", cfg.model.enable_tafa);
    cfg.loss.gamma = j.value("gamma", cfg.loss.gamma);
    cfg.loss.w_traj = j.value("w_traj", cfg.loss.w_traj);
    cfg.loss.w_vis = j.value("w_vis", cfg.loss.w_vis);
    cfg.batch = j.value("batch", cfg.batch);
    cfg.steps = j.value("steps", cfg.steps);
    cfg.lr_max = j.value("lr_max", cfg.lr_max);
    cfg.n_queries = j.value("N", cfg.n_queries);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.clip_norm = j.value("clip_norm", cfg.clip_norm);
    cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
    cfg.warmup_frac = j.value("warmup_frac", cfg.warmup_frac);
    cfg.final_div = j.value("final_div", cfg.final_div);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: '" + path + "' is not valid JSON: " + e.what());
  }
  return train_config_from_json(j);
}

std::string config_hash(const ModelConfig& cfg) {
  nlohmann::json j;
  j["T"] = cfg.t_window;
  j["channels"] = cfg.channels;
  j["stride"] = cfg.stride;
  j["levels"] = cfg.levels;
  j["crop_radius"] = cfg.crop_radius;
  j["aux_samples"] = cfg.aux_samples;
  j["self_sim_radius"] = cfg.self_sim_radius;
  j["attn_radius"] = cfg.attn_radius;
  j["attn_dim"] = cfg.attn_dim;
  j["mixer_depth"] = cfg.mixer_depth;
  j["mixer_hidden"] = cfg.mixer_hidden;
  j["enable_sofe"] = cfg.enable_sofe;
  j["enable_tafa"] = cfg.enable_tafa;
  const std::string s = "ptrack-ckpt-v1|" + j.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
  return std::string(buf);
}

}  // namespace ptrack
