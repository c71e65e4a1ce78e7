// Command-line entry point. Subcommands:
//   gen-data  generate synthetic sequences with exact ground truth
//   train     train a tracking model on a sequence directory
//   eval      score a checkpoint on a dataset (JSON report on stdout)
//   track     track query points through one sequence (JSON on stdout)
//   viz       render per-frame trajectory overlays as PNGs
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
// failure, 1 anything else.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "ptrack/chaining.hpp"
#include "ptrack/checkpoint.hpp"
#include "ptrack/data.hpp"
#include "ptrack/evalrun.hpp"
#include "ptrack/train.hpp"
#include "ptrack/viz.hpp"

namespace {

using namespace ptrack;
namespace fs = std::filesystem;

int cmd_gen_data(std::uint64_t seed, int count, const std::string& out,
                 const SeqConfig& scfg) {
  validate(scfg);
  if (count < 1) throw ConfigError("gen-data: count must be positive");
  fs::create_directories(out);
  for (int i = 0; i < count; ++i) {
    const Sequence seq = generate(seed + std::uint64_t(i), scfg);
    char name[32];
    std::snprintf(name, sizeof name, "seq_%04d", i);
    save_sequence(seq, (fs::path(out) / name).string());
  }
  std::fprintf(stderr, "wrote %d sequences under %s\n", count, out.c_str());
  return 0;
}

int cmd_track(const std::string& ckpt, const std::string& video_dir,
              const std::string& queries_path, int k_test,
              const std::string& save_pred) {
  TrainConfig cfg = checkpoint_config(ckpt);
  TrackModel<float> model(cfg.model, 0);
  load_checkpoint_params(ckpt, model.params());

  const Sequence seq = load_sequence(video_dir);
  if (seq.h % cfg.model.stride != 0 || seq.w % cfg.model.stride != 0)
    throw DataError("track: frame dimensions must be divisible by the stride");

  std::ifstream qin(queries_path);
  if (!qin) throw DataError("track: cannot open queries '" + queries_path + "'");
  nlohmann::json qj;
  try {
    qin >> qj;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("track: queries file is not valid JSON: " +
                    std::string(e.what()));
  }
  if (qj.is_object() && qj.contains("queries")) qj = qj["queries"];
  if (!qj.is_array() || qj.empty())
    throw DataError("track: expected a non-empty JSON array of [x, y] pairs");
  std::vector<std::array<float, 2>> queries;
  for (const auto& e : qj) {
    if (!e.is_array() || e.size() != 2)
      throw DataError("track: each query must be an [x, y] pair");
    queries.push_back({e[0].get<float>(), e[1].get<float>()});
  }

  std::vector<std::vector<float>> maps;
  maps.reserve(std::size_t(seq.t));
  for (int i = 0; i < seq.t; ++i) {
    auto img = normalize_rgb_chw<float>(seq.frame(i), seq.h, seq.w);
    maps.push_back(model.encode_frame_values(img.data(), seq.h, seq.w));
  }
  std::vector<const float*> ptrs;
  for (const auto& m : maps) ptrs.push_back(m.data());

  const int h = seq.h / cfg.model.stride, w = seq.w / cfg.model.stride;
  const auto tracks =
      track_video(model, ptrs, h, w, queries, k_test, seq.h, seq.w);

  nlohmann::json out;
  out["n_queries"] = queries.size();
  out["t"] = seq.t;
  nlohmann::json jt = nlohmann::json::array(), jv = nlohmann::json::array();
  for (const auto& vt : tracks) {
    nlohmann::json pos = nlohmann::json::array(),
                   vis = nlohmann::json::array();
    for (int f = 0; f < seq.t; ++f) {
      pos.push_back({vt.pos[std::size_t(f)][0], vt.pos[std::size_t(f)][1]});
      vis.push_back(vt.vis[std::size_t(f)]);
    }
    jt.push_back(pos);
    jv.push_back(vis);
  }
  out["tracks"] = jt;
  out["visibility"] = jv;
  if (!save_pred.empty()) {
    std::vector<float> flat;
    std::vector<unsigned char> flags;
    for (const auto& vt : tracks)
      for (int f = 0; f < seq.t; ++f) {
        flat.push_back(vt.pos[std::size_t(f)][0]);
        flat.push_back(vt.pos[std::size_t(f)][1]);
        flags.push_back(vt.vis[std::size_t(f)] > 0.5f ? 1 : 0);
      }
    save_predictions(save_pred, int(tracks.size()), seq.t, flat, flags);
    std::fprintf(stderr, "wrote predictions under %s\n", save_pred.c_str());
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_viz(const std::string& seq_dir, const std::string& pred_dir,
            const std::string& out_dir) {
  const Sequence seq = load_sequence(seq_dir);
  int n_pred = 0;
  std::vector<float> pred;
  if (!pred_dir.empty()) {
    int t = 0;
    std::vector<unsigned char> vis;
    load_predictions(pred_dir, &n_pred, &t, &pred, &vis);
    if (t != seq.t)
      throw DataError("viz: predictions cover " + std::to_string(t) +
                      " frames, sequence has " + std::to_string(seq.t));
  }
  const int frames = render_overlay(seq, n_pred, pred, out_dir);
  std::fprintf(stderr, "wrote %d overlays under %s\n", frames,
               out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"point tracking toolkit"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate synthetic sequences");
  std::uint64_t g_seed = 1;
  int g_count = 1;
  std::string g_out;
  SeqConfig g_cfg;
  gen->add_option("--seed", g_seed, "seed of the first sequence")->required();
  gen->add_option("--count", g_count, "number of sequences")->required();
  gen->add_option("--out", g_out, "output directory")->required();
  gen->add_option("--frames", g_cfg.t, "frames per sequence");
  gen->add_option("--height", g_cfg.h, "frame height");
  gen->add_option("--width", g_cfg.w, "frame width");
  gen->add_option("--tracks", g_cfg.n_tracks, "tracks per sequence");
  gen->add_option("--motion", g_cfg.motion, "translation magnitude, px/frame");
  gen->add_option("--spin", g_cfg.spin, "rotation magnitude");
  gen->add_option("--zoom", g_cfg.zoom, "scale-change magnitude");
  gen->add_flag("--uniform-translation", g_cfg.uniform_translation,
                "pure +x translation (exact ground truth)");

  // train
  auto* tr = app.add_subcommand("train", "train a tracking model");
  std::string t_config, t_data, t_out;
  std::optional<int> t_steps, t_batch, t_n, t_k, t_t, t_ckpt_every;
  std::optional<double> t_lr;
  std::optional<std::uint64_t> t_seed;
  std::optional<bool> t_sofe, t_tafa;
  bool t_quiet = false;
  tr->add_option("--config", t_config, "JSON config file (defaults if omitted)");
  tr->add_option("--data", t_data, "sequence directory")->required();
  tr->add_option("--out", t_out, "output directory")->required();
  tr->add_option("--steps", t_steps, "override: training steps");
  tr->add_option("--batch", t_batch, "override: sequences per step");
  tr->add_option("--n-queries", t_n, "override: queries per sequence");
  tr->add_option("--k", t_k, "override: refinement iterations");
  tr->add_option("--t", t_t, "override: window length");
  tr->add_option("--lr-max", t_lr, "override: peak learning rate");
  tr->add_option("--seed", t_seed, "override: run seed");
  tr->add_option("--checkpoint-every", t_ckpt_every,
                 "override: steps between checkpoints");
  tr->add_option("--enable-sofe", t_sofe, "override: true/false");
  tr->add_option("--enable-tafa", t_tafa, "override: true/false");
  tr->add_flag("--quiet", t_quiet, "suppress progress output");

  // eval
  auto* ev = app.add_subcommand("eval", "score a checkpoint on a dataset");
  std::string e_ckpt, e_data, e_strategy = "first";
  int e_k_test = 6;
  ev->add_option("--ckpt", e_ckpt, "checkpoint manifest")->required();
  ev->add_option("--data", e_data, "sequence directory")->required();
  ev->add_option("--strategy", e_strategy, "first|strided");
  ev->add_option("--k-test", e_k_test, "refinement iterations at test time");

  // track
  auto* tk = app.add_subcommand("track", "track query points in a sequence");
  std::string k_ckpt, k_video, k_queries;
  int k_k_test = 6;
  tk->add_option("--ckpt", k_ckpt, "checkpoint manifest")->required();
  tk->add_option("--video-dir", k_video, "sequence directory")->required();
  tk->add_option("--queries", k_queries, "JSON file of [x, y] pairs")
      ->required();
  tk->add_option("--k-test", k_k_test, "refinement iterations");
  std::string k_save;
  tk->add_option("--save-pred", k_save,
                 "also write a predictions directory for viz");

  // viz
  auto* vz = app.add_subcommand("viz", "render trajectory overlays");
  std::string v_seq, v_pred, v_out;
  vz->add_option("--seq", v_seq, "sequence directory")->required();
  vz->add_option("--pred", v_pred, "predictions directory (optional)");
  vz->add_option("--out", v_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the usage message
    return 2;
  }

  try {
    if (*gen) return cmd_gen_data(g_seed, g_count, g_out, g_cfg);
    if (*tr) {
      TrainConfig cfg =
          t_config.empty() ? desk_config() : load_train_config(t_config);
      if (t_steps) cfg.steps = *t_steps;
      if (t_batch) cfg.batch = *t_batch;
      if (t_n) cfg.n_queries = *t_n;
      if (t_k) cfg.model.iters_train = *t_k;
      if (t_t) cfg.model.t_window = *t_t;
      if (t_lr) cfg.lr_max = *t_lr;
      if (t_seed) cfg.seed = *t_seed;
      if (t_ckpt_every) cfg.checkpoint_every = *t_ckpt_every;
      if (t_sofe) cfg.model.enable_sofe = *t_sofe;
      if (t_tafa) cfg.model.enable_tafa = *t_tafa;
      validate(cfg);
      const auto result = train(cfg, t_data, t_out, t_quiet);
      std::fprintf(stderr, "finished %d steps; final checkpoint: %s\n",
                   result.steps_run, result.final_checkpoint.c_str());
      return 0;
    }
    if (*ev) {
      const auto report = evaluate(e_ckpt, e_data, e_strategy, e_k_test);
      std::cout << report.dump(2) << "\n";
      return 0;
    }
    if (*tk) return cmd_track(k_ckpt, k_video, k_queries, k_k_test, k_save);
    if (*vz) return cmd_viz(v_seq, v_pred, v_out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
