#include "ptrack/evalrun.hpp"

#include <cmath>
#include <filesystem>
#include <optional>

#include "ptrack/chaining.hpp"
#include "ptrack/checkpoint.hpp"
#include "ptrack/data.hpp"

namespace ptrack {

namespace {

namespace fs = std::filesystem;

// Tracks one query through `seg` (frames ordered as they should be chained,
// the seed frame first). Segments shorter than the window are padded by
// repeating the boundary frame; only the real frames are returned.
VideoTrack<float> run_segment(const TrackModel<float>& model,
                              std::vector<const float*> seg, int h, int w,
                              std::array<float, 2> seed_px, int k_test,
                              int img_h, int img_w) {
  const std::size_t real = seg.size();
  while (int(seg.size()) < model.config().t_window)
    seg.push_back(seg.back());
  auto vt =
      track_video(model, seg, h, w, {seed_px}, k_test, img_h, img_w)[0];
  vt.pos.resize(real);
  vt.vis.resize(real);
  return vt;
}

struct Agg {
  double sum = 0;
  int n = 0;
  void add(const std::optional<double>& v) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  nlohmann::json json() const {
    return n > 0 ? nlohmann::json(sum / n) : nlohmann::json();
  }
};

}  // namespace

nlohmann::json evaluate(const std::string& ckpt_path,
                        const std::string& data_dir,
                        const std::string& strategy, int k_test) {
  const SampleStrategy strat = parse_strategy(strategy);
  if (k_test < 1) throw ConfigError("evaluate: k_test must be positive");
  TrainConfig cfg = checkpoint_config(ckpt_path);
  TrackModel<float> model(cfg.model, 0);
  load_checkpoint_params(ckpt_path, model.params());
  const auto& mc = cfg.model;

  const auto dirs = list_sequence_dirs(data_dir);
  if (dirs.empty())
    throw DataError("evaluate: no sequences under '" + data_dir + "'");

  nlohmann::json per_seq = nlohmann::json::array();
  Agg agg_ate_vis, agg_ate_occ, agg_pck, agg_aj, agg_occ;
  std::int64_t total_queries = 0;

  for (const auto& dir : dirs) {
    const Sequence seq = load_sequence(dir);
    if (seq.h % mc.stride != 0 || seq.w % mc.stride != 0)
      throw DataError("evaluate: sequence '" + dir +
                      "' dimensions are not divisible by the stride");
    const int h = seq.h / mc.stride, w = seq.w / mc.stride;

    // Encode every frame once; queries reuse the maps.
    std::vector<std::vector<float>> maps;
    maps.reserve(std::size_t(seq.t));
    for (int i = 0; i < seq.t; ++i) {
      auto img = normalize_rgb_chw<float>(seq.frame(i), seq.h, seq.w);
      maps.push_back(model.encode_frame_values(img.data(), seq.h, seq.w));
    }
    std::vector<const float*> ptrs;
    for (const auto& m : maps) ptrs.push_back(m.data());

    const auto sampled =
        sample_queries(seq.vis, seq.n_tracks, seq.t, strat);
    nlohmann::json entry;
    entry["dir"] = fs::path(dir).filename().string();
    entry["n_queries"] = sampled.queries.size();
    entry["skipped_tracks"] = sampled.skipped_tracks;
    if (sampled.queries.empty()) {
      entry["metrics"] = nullptr;
      per_seq.push_back(entry);
      continue;
    }
    total_queries += std::int64_t(sampled.queries.size());

    EvalRecord rec;
    rec.n_queries = int(sampled.queries.size());
    rec.n_frames = seq.t;
    const std::size_t pairs = std::size_t(rec.n_queries) * seq.t;
    rec.pred.assign(pairs * 2, 0.0);
    rec.pred_vis.assign(pairs, 0);
    rec.gt.assign(pairs * 2, 0.0);
    rec.gt_vis.assign(pairs, 0);
    rec.counted.assign(pairs, 1);

    for (std::size_t qi = 0; qi < sampled.queries.size(); ++qi) {
      const int track = sampled.queries[qi].track;
      const int qf = sampled.queries[qi].frame;
      const std::size_t gbase = std::size_t(track) * seq.t;
      std::array<float, 2> seed = {seq.tracks[(gbase + qf) * 2],
                                   seq.tracks[(gbase + qf) * 2 + 1]};
      for (int f = 0; f < seq.t; ++f) {
        const std::size_t i = qi * std::size_t(seq.t) + f;
        rec.gt[2 * i] = double(seq.tracks[(gbase + f) * 2]);
        rec.gt[2 * i + 1] = double(seq.tracks[(gbase + f) * 2 + 1]);
        rec.gt_vis[i] = seq.vis[gbase + f];
      }

      // Forward from the query frame.
      auto fwd = run_segment(
          model, {ptrs.begin() + qf, ptrs.end()}, h, w, seed, k_test,
          seq.h, seq.w);
      for (std::size_t j = 0; j < fwd.pos.size(); ++j) {
        const std::size_t i = qi * std::size_t(seq.t) + qf + j;
        rec.pred[2 * i] = double(fwd.pos[j][0]);
        rec.pred[2 * i + 1] = double(fwd.pos[j][1]);
        rec.pred_vis[i] = fwd.vis[j] > 0.5f ? 1 : 0;
      }

      if (strat == SampleStrategy::kStrided && qf > 0) {
        // Backward over the reversed prefix; the query frame itself keeps
        // the forward run's estimate.
        std::vector<const float*> rev;
        for (int f = qf; f >= 0; --f) rev.push_back(ptrs[std::size_t(f)]);
        auto bwd = run_segment(model, rev, h, w, seed, k_test, seq.h, seq.w);
        for (std::size_t j = 1; j < bwd.pos.size(); ++j) {
          const std::size_t i = qi * std::size_t(seq.t) + (qf - int(j));
          rec.pred[2 * i] = double(bwd.pos[j][0]);
          rec.pred[2 * i + 1] = double(bwd.pos[j][1]);
          rec.pred_vis[i] = bwd.vis[j] > 0.5f ? 1 : 0;
        }
      } else if (qf > 0) {
        // "first" never tracks the frames before the query; exclude them.
        for (int f = 0; f < qf; ++f)
          rec.counted[qi * std::size_t(seq.t) + f] = 0;
      }
    }

    const auto m = compute_metrics(rec);
    entry["metrics"] = metrics_json(m);
    per_seq.push_back(entry);
    agg_ate_vis.add(m.ate.vis);
    agg_ate_occ.add(m.ate.occ);
    agg_pck.add(m.pck.average);
    agg_aj.add(m.jaccard ? std::optional<double>(m.jaccard->average)
                         : std::nullopt);
    agg_occ.add(m.occ_acc);
  }

  if (total_queries == 0)
    throw DataError("evaluate: no queries could be sampled from '" +
                    data_dir + "'");

  nlohmann::json report;
  report["checkpoint"] = fs::path(ckpt_path).filename().string();
  report["config_hash"] = config_hash(cfg.model);
  report["strategy"] = strategy;
  report["k_test"] = k_test;
  report["n_sequences"] = dirs.size();
  report["n_queries"] = total_queries;
  report["sequences"] = per_seq;
  nlohmann::json agg;
  agg["ate_vis"] = agg_ate_vis.json();
  agg["ate_occ"] = agg_ate_occ.json();
  agg["a_pck"] = agg_pck.json();
  agg["average_jaccard"] = agg_aj.json();
  agg["occlusion_accuracy"] = agg_occ.json();
  report["aggregate"] = agg;
  return report;
}

}  // namespace ptrack
