#include "ptrack/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ptrack/checkpoint.hpp"
#include "ptrack/data.hpp"
#include "ptrack/losses.hpp"
#include "ptrack/refiner.hpp"

namespace ptrack {

namespace {

namespace fs = std::filesystem;

struct ItemLosses {
  double traj = 0, vis = 0, total = 0;
};

// Forward + backward for one sequence window with its sampled queries.
// Gradients are scaled by `weight` (1/batch) through the backward seed.
ItemLosses run_item(const TrackModel<float>& model, GradSink<float>& sink,
                    const TrainConfig& cfg, const Sequence& seq, int win_start,
                    const std::vector<int>& query_tracks, float weight,
                    int step) {
  const auto& mc = cfg.model;
  const int t = mc.t_window;
  const int nq = int(query_tracks.size());
  const float stride = float(mc.stride);

  Graph<float> g(true);
  Ctx<float> c{g, &sink};

  std::vector<std::vector<float>> imgs;
  imgs.reserve(std::size_t(t));
  std::vector<Var<float>> maps;
  maps.reserve(std::size_t(t));
  for (int i = 0; i < t; ++i) {
    imgs.push_back(
        normalize_rgb_chw<float>(seq.frame(win_start + i), seq.h, seq.w));
    maps.push_back(model.encode_frame(
        c, g.view(imgs.back().data(), Shape(3, seq.h, seq.w))));
  }

  std::vector<float> qxy(std::size_t(nq) * 2);
  for (int j = 0; j < nq; ++j) {
    const std::size_t base =
        (std::size_t(query_tracks[std::size_t(j)]) * seq.t + win_start) * 2;
    qxy[2 * std::size_t(j)] = seq.tracks[base] / stride;
    qxy[2 * std::size_t(j) + 1] = seq.tracks[base + 1] / stride;
  }
  auto queries = g.constant(Shape(nq, 2), qxy.data());

  auto win = model.forward_window(c, maps, queries, mc.iters_train);

  // Ground truth in grid units, rows (frame-major, query-minor).
  std::vector<float> gt(std::size_t(t) * nq * 2);
  std::vector<unsigned char> labels(std::size_t(t) * nq);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < nq; ++j) {
      const int track = query_tracks[std::size_t(j)];
      const std::size_t src =
          (std::size_t(track) * seq.t + win_start + i) * 2;
      const std::size_t dst = (std::size_t(i) * nq + j) * 2;
      gt[dst] = seq.tracks[src] / stride;
      gt[dst + 1] = seq.tracks[src + 1] / stride;
      labels[std::size_t(i) * nq + j] =
          seq.vis[std::size_t(track) * seq.t + win_start + i];
    }
  const std::vector<unsigned char> q_mask(std::size_t(nq), 1);

  auto l_traj =
      trajectory_loss(g, win.traj, gt, q_mask, t, nq, cfg.loss.gamma);
  auto l_vis = visibility_loss(g, win.vis_logits, labels, q_mask, t, nq);
  auto l_total = total_loss(g, l_traj, l_vis, cfg.loss);

  ItemLosses out;
  out.traj = double(l_traj.val(0));
  out.vis = double(l_vis.val(0));
  out.total = double(l_total.val(0));
  if (!std::isfinite(out.total))
    throw NumericError("train: non-finite loss at step " +
                       std::to_string(step));
  g.backward(l_total, weight);
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::string& data_dir,
                  const std::string& out_dir, bool quiet) {
  validate(cfg);
  const auto dirs = list_sequence_dirs(data_dir);
  if (dirs.empty())
    throw DataError("train: no sequences under '" + data_dir + "'");
  std::vector<Sequence> seqs;
  seqs.reserve(dirs.size());
  for (const auto& d : dirs) {
    seqs.push_back(load_sequence(d));
    const auto& s = seqs.back();
    if (s.t < cfg.model.t_window)
      throw DataError("train: sequence '" + d + "' has " + std::to_string(s.t) +
                      " frames, window needs " +
                      std::to_string(cfg.model.t_window));
    if (s.h % cfg.model.stride != 0 || s.w % cfg.model.stride != 0)
      throw DataError("train: sequence '" + d +
                      "' dimensions are not divisible by the stride");
  }

  fs::create_directories(out_dir);
  std::ofstream log((fs::path(out_dir) / "train_log.jsonl").string());
  if (!log) throw DataError("train: cannot write log under '" + out_dir + "'");

  TrackModel<float> model(cfg.model, cfg.seed);
  GradSink<float> sink(model.params());
  AdamW<float> opt(model.params());
  Rng rng(cfg.seed ^ 0xd5a7a5eedULL);

  const int t = cfg.model.t_window;
  TrainResult result;
  for (int step = 0; step < cfg.steps; ++step) {
    const double lr = one_cycle_lr(step, cfg.steps, cfg.lr_max,
                                   cfg.warmup_frac, cfg.final_div);
    sink.zero();
    double m_traj = 0, m_vis = 0, m_total = 0;
    for (int b = 0; b < cfg.batch; ++b) {
      // Draw a sequence, flips, and a window whose first frame has at least
      // one visible track to query.
      Sequence flipped;
      const Sequence* item = nullptr;
      int win_start = 0;
      std::vector<int> eligible;
      for (int attempt = 0; attempt < 64 && eligible.empty(); ++attempt) {
        const int si = rng.uniform_int(0, int(seqs.size()) - 1);
        const bool fh = rng.uniform() < 0.5;
        const bool fv = rng.uniform() < 0.5;
        item = &seqs[std::size_t(si)];
        if (fh || fv) {
          flipped = flip_sequence(*item, fh, fv);
          item = &flipped;
        }
        win_start =
            item->t > t ? rng.uniform_int(0, item->t - t) : 0;
        for (int n = 0; n < item->n_tracks; ++n)
          if (item->vis[std::size_t(n) * item->t + win_start])
            eligible.push_back(n);
      }
      if (eligible.empty())
        throw DataError(
            "train: could not find a window with a visible query after 64 "
            "draws");
      // Shuffle and take N (with wraparound when fewer are eligible).
      for (int i = int(eligible.size()) - 1; i > 0; --i)
        std::swap(eligible[std::size_t(i)],
                  eligible[std::size_t(rng.uniform_int(0, i))]);
      std::vector<int> chosen(std::size_t(cfg.n_queries));
      for (int j = 0; j < cfg.n_queries; ++j)
        chosen[std::size_t(j)] =
            eligible[std::size_t(j) % eligible.size()];

      auto losses = run_item(model, sink, cfg, *item, win_start, chosen,
                             1.0f / float(cfg.batch), step);
      m_traj += losses.traj / cfg.batch;
      m_vis += losses.vis / cfg.batch;
      m_total += losses.total / cfg.batch;
    }

    opt.step(model.params(), sink, lr, cfg.weight_decay, cfg.clip_norm);

    nlohmann::json line;
    line["step"] = step;
    line["lr"] = lr;
    line["loss_traj"] = m_traj;
    line["loss_vis"] = m_vis;
    line["loss_total"] = m_total;
    log << line.dump() << "\n";
    if (!log)
      throw DataError("train: log write failed under '" + out_dir + "'");

    if (!quiet && ((step + 1) % 25 == 0 || step == 0))
      std::fprintf(stderr, "step %d/%d  lr %.3g  loss %.4f\n", step + 1,
                   cfg.steps, lr, m_total);

    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 < cfg.steps) {
      char name[48];
      std::snprintf(name, sizeof name, "ckpt_step_%06d.json", step + 1);
      save_checkpoint((fs::path(out_dir) / name).string(), model.params(),
                      cfg);
    }
    result.steps_run = step + 1;
  }

  log.flush();
  result.final_checkpoint = (fs::path(out_dir) / "ckpt_final.json").string();
  save_checkpoint(result.final_checkpoint, model.params(), cfg);
  return result;
}

}  // namespace ptrack
