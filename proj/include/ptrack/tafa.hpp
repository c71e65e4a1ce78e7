#pragma once

// Target feature aggregation: single-head cross-attention from the fused
// correlation vector onto a (2*r_a+1)^2 bilinear patch of the target feature
// map around the current estimate. Learned per-offset embeddings are added to
// the keys; scores use 1/sqrt(d_a) scaling. The result is added to the point
// feature.

#include <cmath>
#include <string>
#include <vector>

#include "ptrack/correlation.hpp"
#include "ptrack/nn.hpp"

namespace ptrack {

template <typename S>
struct TafaNet {
  int r_a = 3;
  int d_a = 128;
  int channels = 128;

  Linear<S> q_proj;  // 196 -> d_a
  Linear<S> k_proj;  // C -> d_a
  Linear<S> v_proj;  // C -> C
  Param<S>* pos = nullptr;  // [(2*r_a+1)^2, d_a]

  TafaNet() = default;
  TafaNet(ParamStore<S>& ps, int channels_, int r_a_, int d_a_, Rng& rng)
      : r_a(r_a_), d_a(d_a_), channels(channels_) {
    q_proj = Linear<S>(ps, "tafa.q", kCropLen, d_a_, rng);
    k_proj = Linear<S>(ps, "tafa.k", channels_, d_a_, rng);
    v_proj = Linear<S>(ps, "tafa.v", channels_, channels_, rng);
    pos = &ps.add("tafa.pos", Shape(slots(), d_a_));
    init_normal(*pos, 0.02, rng);
  }

  int slots() const { return (2 * r_a + 1) * (2 * r_a + 1); }

  // Patch offsets in feature-grid units, dy-major to match crop layout.
  std::vector<S> patch_offsets() const {
    std::vector<S> off;
    off.reserve(std::size_t(slots()) * 2);
    for (int dy = -r_a; dy <= r_a; ++dy)
      for (int dx = -r_a; dx <= r_a; ++dx) {
        off.push_back(S(dx));
        off.push_back(S(dy));
      }
    return off;
  }

  // corr: [R, 196] fused correlation vectors; patch: [R*slots, C] bilinear
  // target features aligned with patch_offsets order. Returns f' [R, C].
  Var<S> aggregate(Ctx<S>& c, Var<S> corr, Var<S> patch) const {
    require(corr.p->cols() == kCropLen, "tafa: corr width");
    require(patch.p->rows() == corr.p->rows() * slots(), "tafa: patch rows");
    auto q = q_proj(c, corr);                              // [R, d_a]
    auto k = k_proj(c, patch);                             // [R*P, d_a]
    k = add(c.g, k, tile_rows(c.g, c.P(*pos), corr.p->rows()));
    auto v = v_proj(c, patch);                             // [R*P, C]
    auto qe = expand_rows(c.g, q, slots());                // [R*P, d_a]
    auto dots = rowsum(c.g, hadamard(c.g, qe, k));         // [R*P, 1]
    auto scores = scale(c.g, copy_reshape(c.g, dots, Shape(corr.p->rows(), slots())),
                        S(1.0 / std::sqrt(double(d_a))));
    auto w = softmax_rows(c.g, scores);
    return grouped_weighted_sum(c.g, w, v);
  }
};

}  // namespace ptrack
