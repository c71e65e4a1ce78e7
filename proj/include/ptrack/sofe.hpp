#pragma once

// Source feature enhancement. From frame-0 self-similarity around the query,
// a five-layer MLP predicts M feature-grid offsets; auxiliary features are
// gathered at those offsets and each one's correlation crop is fused with the
// point's own crop by a two-layer encoder back to one 196-dim vector.

#include <string>
#include <vector>

#include "ptrack/correlation.hpp"
#include "ptrack/nn.hpp"

namespace ptrack {

template <typename S>
struct SofeNet {
  int m = 9;          // auxiliary samples
  int r_c = 2;        // self-similarity crop radius
  int crop_dim = kCropLen;

  // 5 linear layers: projection, 3-layer FFN at 4x128 hidden, offset head.
  Linear<S> samp1, samp2, samp3, samp4, samp_head;
  // 2 linear layers: (M+1)*196 -> 4*196 -> 196.
  Linear<S> enc1, enc2;

  SofeNet() = default;
  SofeNet(ParamStore<S>& ps, int m_, int r_c_, int levels, Rng& rng)
      : m(m_), r_c(r_c_) {
    const int in_dim = crop_len(levels, r_c_);
    samp1 = Linear<S>(ps, "sofe.samp1", in_dim, 128, rng);
    samp2 = Linear<S>(ps, "sofe.samp2", 128, 512, rng);
    samp3 = Linear<S>(ps, "sofe.samp3", 512, 512, rng);
    samp4 = Linear<S>(ps, "sofe.samp4", 512, 128, rng);
    // Zero-init: training starts from "no context" and grows outward.
    samp_head = Linear<S>(ps, "sofe.samp_head", 128, 2 * m_, rng, true);
    const int hidden = 4 * crop_dim;
    enc1 = Linear<S>(ps, "sofe.enc1", (m_ + 1) * crop_dim, hidden, rng);
    enc2 = Linear<S>(ps, "sofe.enc2", hidden, crop_dim, rng);
  }

  static constexpr int kSamplerLayers = 5;
  static constexpr int kEncoderLayers = 2;

  // self_sim: [Q, L*(2*r_c+1)^2] -> offsets [Q, 2M] in feature-grid units.
  Var<S> predict_offsets(Ctx<S>& c, Var<S> self_sim) const {
    auto y = relu(c.g, samp1(c, self_sim));
    y = relu(c.g, samp2(c, y));
    y = relu(c.g, samp3(c, y));
    y = relu(c.g, samp4(c, y));
    return samp_head(c, y);
  }

  // corr_in: [R, (M+1)*196], aux crops in offset order then the point crop.
  Var<S> encode_correlations(Ctx<S>& c, Var<S> corr_in) const {
    require(corr_in.p->cols() == (m + 1) * crop_dim,
            "encode_correlations: expected (M+1)*196 input");
    return enc2(c, relu(c.g, enc1(c, corr_in)));
  }
};

// Frame-0 self-similarity crop for queries [Q, 2]: correlate each query's
// own feature against I_0, pool, crop at the query with radius r_c.
template <typename S>
Var<S> self_similarity_crop(Graph<S>& g, Var<S> f_src, Var<S> fmap0, int h,
                            int w, Var<S> queries, int r_c, int levels) {
  auto sim = point_correlation(g, f_src, fmap0);
  auto pyr = build_pyramid(g, sim, h, w, levels);
  return crop_pyramid_at(g, pyr, h, w, queries, 1, r_c);
}

}  // namespace ptrack
