#pragma once

// Training objectives. Trajectory loss: exponentially weighted L1 over the K
// iterates, gamma^(K-k), distances in feature-grid units, mean over frames
// and supervised queries. Visibility loss: binary cross entropy. Total:
// w1 * L_TAP + w2 * L_Vis.

#include <cmath>
#include <vector>

#include "ptrack/common.hpp"
#include "ptrack/tensor.hpp"

namespace ptrack {

struct LossConfig {
  double gamma = 0.8;
  double w_traj = 1.0;  // w1
  double w_vis = 10.0;  // w2
};

inline void validate(const LossConfig& lc) {
  require(lc.gamma > 0.0 && lc.gamma <= 1.0, "loss: gamma must be in (0, 1]");
  require(lc.w_traj >= 0.0 && lc.w_vis >= 0.0, "loss: weights must be >= 0");
}

// ---- value-level forms (metrics/tests; no graph) ----------------------------

// iters[k] is a flat [n*2] coordinate array; gt likewise. mask[i] selects
// supervised rows (visible-at-query-time queries); mean reduction over
// selected rows, |dx|+|dy| per row.
template <typename S>
double trajectory_loss_value(const std::vector<std::vector<S>>& iters,
                             const std::vector<S>& gt,
                             const std::vector<unsigned char>& mask,
                             double gamma) {
  const int k_total = int(iters.size());
  require(k_total >= 1, "trajectory_loss: need at least one iterate");
  const std::size_t n = mask.size();
  std::size_t selected = 0;
  for (auto m : mask) selected += m ? 1 : 0;
  require(selected > 0, "trajectory_loss: no supervised rows");
  double total = 0.0;
  for (int k = 0; k < k_total; ++k) {
    require(iters[std::size_t(k)].size() == 2 * n && gt.size() == 2 * n,
            "trajectory_loss: shape mismatch");
    double e = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!mask[i]) continue;
      e += std::abs(double(iters[std::size_t(k)][2 * i]) - double(gt[2 * i])) +
           std::abs(double(iters[std::size_t(k)][2 * i + 1]) -
                    double(gt[2 * i + 1]));
    }
    total += std::pow(gamma, double(k_total - 1 - k)) * (e / double(selected));
  }
  return total;
}

// probs in (0,1) are clamped to [eps, 1-eps]; labels in {0,1}. Returns the
// mean BCE over selected rows and reports whether clamping occurred.
template <typename S>
double visibility_loss_value(const std::vector<S>& probs,
                             const std::vector<unsigned char>& labels,
                             const std::vector<unsigned char>& mask,
                             bool* clamped = nullptr, double eps = 1e-6) {
  require(probs.size() == labels.size() && probs.size() == mask.size(),
          "visibility_loss: shape mismatch");
  std::size_t selected = 0;
  double total = 0.0;
  bool any_clamp = false;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!mask[i]) continue;
    double p = double(probs[i]);
    if (p < eps || p > 1.0 - eps) any_clamp = true;
    p = std::min(std::max(p, eps), 1.0 - eps);
    total += labels[i] ? -std::log(p) : -std::log(1.0 - p);
    ++selected;
  }
  require(selected > 0, "visibility_loss: no supervised rows");
  if (clamped) *clamped = any_clamp;
  return total / double(selected);
}

inline double total_loss_value(double l_tap, double l_vis, double w1,
                               double w2) {
  return w1 * l_tap + w2 * l_vis;
}

// ---- graph forms (training) -------------------------------------------------

// traj[k]: [(T*Q), 2] grid-unit iterates; gt likewise (flattened, row order
// matching the iterates). q_mask[j] marks supervised queries. Rows are
// (frame-major, query-minor).
template <typename S>
Var<S> trajectory_loss(Graph<S>& g, const std::vector<Var<S>>& traj,
                       const std::vector<S>& gt,
                       const std::vector<unsigned char>& q_mask, int t, int q,
                       double gamma) {
  const int k_total = int(traj.size());
  require(k_total >= 1, "trajectory_loss: need at least one iterate");
  int selected = 0;
  for (auto m : q_mask) selected += m ? 1 : 0;
  require(int(q_mask.size()) == q, "trajectory_loss: mask size");
  require(selected > 0, "trajectory_loss: no supervised queries");
  std::vector<S> row_w(std::size_t(t) * q);
  const S wnorm = S(1.0 / (double(t) * double(selected)));
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < q; ++j)
      row_w[std::size_t(i) * q + j] = q_mask[std::size_t(j)] ? wnorm : S(0);
  std::vector<Var<S>> terms;
  std::vector<S> coefs;
  for (int k = 0; k < k_total; ++k) {
    terms.push_back(weighted_l1(g, traj[std::size_t(k)], gt, row_w));
    coefs.push_back(S(std::pow(gamma, double(k_total - 1 - k))));
  }
  return wsum(g, terms, coefs);
}

// logits: [(T*Q), 1]; labels per row in {0,1}; q_mask as above.
template <typename S>
Var<S> visibility_loss(Graph<S>& g, Var<S> logits,
                       const std::vector<unsigned char>& labels,
                       const std::vector<unsigned char>& q_mask, int t, int q) {
  require(std::int64_t(labels.size()) == std::int64_t(t) * q,
          "visibility_loss: labels size");
  int selected = 0;
  for (auto m : q_mask) selected += m ? 1 : 0;
  require(selected > 0, "visibility_loss: no supervised queries");
  std::vector<S> y(std::size_t(t) * q), row_w(std::size_t(t) * q);
  const S wnorm = S(1.0 / (double(t) * double(selected)));
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < q; ++j) {
      const std::size_t r = std::size_t(i) * q + j;
      y[r] = labels[r] ? S(1) : S(0);
      row_w[r] = q_mask[std::size_t(j)] ? wnorm : S(0);
    }
  return bce_logits(g, logits, y, row_w);
}

template <typename S>
Var<S> total_loss(Graph<S>& g, Var<S> l_tap, Var<S> l_vis,
                  const LossConfig& lc) {
  return wsum<S>(g, {l_tap, l_vis}, {S(lc.w_traj), S(lc.w_vis)});
}

}  // namespace ptrack
