#pragma once

// K-iteration trajectory refinement. State is one T-frame window per query:
// coordinates X^k (feature-grid units) and point features F^k, both
// initialized by replicating the query. Each iteration assembles per-frame
// tokens (enhanced feature, fused correlation vector, positional encoding),
// runs an MLP-Mixer over the frame axis, and applies zero-initialized
// delta heads. Coordinates re-enter the next iteration as constants; feature
// state carries gradients across iterations.
//
// The forward builder batches all queries of a window into one graph; rows of
// per-token matrices are ordered (frame-major, query-minor). The public
// inference path runs one query per graph, so removing other queries cannot
// change a query's result.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ptrack/correlation.hpp"
#include "ptrack/encoder.hpp"
#include "ptrack/nn.hpp"
#include "ptrack/sofe.hpp"
#include "ptrack/tafa.hpp"

namespace ptrack {

struct ModelConfig {
  int t_window = 8;         // T
  int channels = 128;       // C
  int stride = 8;           // image px per feature-grid unit
  int levels = 4;           // correlation pyramid depth L
  int crop_radius = 3;      // tracking crop radius r
  int aux_samples = 9;      // M
  int self_sim_radius = 2;  // r_c
  int attn_radius = 3;      // r_a
  int attn_dim = 128;       // d_a
  int mixer_depth = 12;
  int mixer_hidden = 512;
  int iters_train = 4;      // K at training time
  bool enable_sofe = true;
  bool enable_tafa = true;
};

template <typename S>
struct MixerLayer {
  Affine<S> ln1, ln2;
  Linear<S> tok1, tok2;  // [T -> 4T -> T]
  Linear<S> ch1, ch2;    // [h -> 4h -> h]

  MixerLayer() = default;
  MixerLayer(ParamStore<S>& ps, const std::string& name, int t, int hidden,
             Rng& rng)
      : ln1(ps, name + ".ln1", hidden),
        ln2(ps, name + ".ln2", hidden),
        tok1(ps, name + ".tok1", t, 4 * t, rng),
        tok2(ps, name + ".tok2", 4 * t, t, rng),
        ch1(ps, name + ".ch1", hidden, 4 * hidden, rng),
        ch2(ps, name + ".ch2", 4 * hidden, hidden, rng) {}
};

template <typename S>
struct MixerNet {
  int t = 8, hidden = 512, in_dim = 0;
  Linear<S> in_proj;
  std::vector<MixerLayer<S>> layers;
  Affine<S> final_ln;
  Linear<S> head_dx;  // hidden -> 2, zero-init
  Linear<S> head_df;  // hidden -> C, zero-init

  MixerNet() = default;
  MixerNet(ParamStore<S>& ps, int t_, int in_dim_, int hidden_, int depth,
           int channels, Rng& rng)
      : t(t_), hidden(hidden_), in_dim(in_dim_) {
    in_proj = Linear<S>(ps, "mixer.in", in_dim_, hidden_, rng);
    layers.reserve(std::size_t(depth));
    for (int i = 0; i < depth; ++i)
      layers.emplace_back(ps, "mixer.l" + std::to_string(i), t_, hidden_, rng);
    final_ln = Affine<S>(ps, "mixer.final_ln", hidden_);
    head_dx = Linear<S>(ps, "mixer.head_dx", hidden_, 2, rng, true);
    head_df = Linear<S>(ps, "mixer.head_df", hidden_, channels, rng, true);
  }

  // tokens: [(T*Q), in_dim] -> (dX [(T*Q), 2], dF [(T*Q), C])
  std::pair<Var<S>, Var<S>> operator()(Ctx<S>& c, Var<S> tokens, int q) const {
    require(tokens.p->rows() == t * q, "mixer: token rows != T*Q");
    require(tokens.p->cols() == in_dim, "mixer: token width");
    auto x = in_proj(c, tokens);
    for (const auto& l : layers) {
      auto y = layer_norm(c.g, x, c.P(*l.ln1.gamma), c.P(*l.ln1.beta));
      auto tk = tokens_to_rows(c.g, y, t, q);
      tk = l.tok2(c, gelu(c.g, l.tok1(c, tk)));
      x = add(c.g, x, rows_to_tokens(c.g, tk, t, q));
      auto z = layer_norm(c.g, x, c.P(*l.ln2.gamma), c.P(*l.ln2.beta));
      x = add(c.g, x, l.ch2(c, gelu(c.g, l.ch1(c, z))));
    }
    x = layer_norm(c.g, x, c.P(*final_ln.gamma), c.P(*final_ln.beta));
    return {head_dx(c, x), head_df(c, x)};
  }
};

template <typename S>
struct WindowForward {
  std::vector<Var<S>> traj;  // X^1..X^K, each [(T*Q), 2] in grid units
  Var<S> vis_logits;         // [(T*Q), 1]
  Var<S> f_final;            // [(T*Q), C]
  int t = 0, q = 0;
};

template <typename S>
class TrackModel {
 public:
  explicit TrackModel(const ModelConfig& cfg, std::uint64_t init_seed = 1234)
      : cfg_(cfg) {
    Rng rng(init_seed);
    encoder_ = Encoder<S>(params_, cfg.channels, rng);
    sofe_ = SofeNet<S>(params_, cfg.aux_samples, cfg.self_sim_radius,
                       cfg.levels, rng);
    tafa_ = TafaNet<S>(params_, cfg.channels, cfg.attn_radius, cfg.attn_dim,
                       rng);
    const int token_dim = cfg.channels + kCropLen + kPosEncDim;
    mixer_ = MixerNet<S>(params_, cfg.t_window, token_dim, cfg.mixer_hidden,
                         cfg.mixer_depth, cfg.channels, rng);
    vis_head_ = Linear<S>(params_, "vis.head", cfg.channels, 1, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }
  const Encoder<S>& encoder() const { return encoder_; }
  const SofeNet<S>& sofe() const { return sofe_; }
  const TafaNet<S>& tafa() const { return tafa_; }
  const MixerNet<S>& mixer() const { return mixer_; }

  // frame: [3, H, W] normalized to [-1, 1]; returns feature map values.
  std::vector<S> encode_frame_values(const S* frame, int h_img,
                                     int w_img) const {
    Graph<S> g(false);
    Ctx<S> c{g, nullptr};
    auto out = encoder_(c, g.view(frame, Shape(3, h_img, w_img)));
    return {out.data(), out.data() + out.n()};
  }

  Var<S> encode_frame(Ctx<S>& c, Var<S> frame) const {
    return encoder_(c, frame);
  }

  // fmaps: T feature-map vars [C, h, w]; queries: [Q, 2] grid coordinates
  // inside the frame-0 grid. Builds the refinement graph for all queries.
  WindowForward<S> forward_window(Ctx<S>& c, const std::vector<Var<S>>& fmaps,
                                  Var<S> queries, int k_iters) const {
    Graph<S>& g = c.g;
    const int t = int(fmaps.size());
    require(t == cfg_.t_window, "forward_window: window length != T");
    require(queries.p->cols() == 2, "forward_window: queries must be [Q,2]");
    const int q = queries.p->rows();
    const int h = fmaps[0].shape().d[1], w = fmaps[0].shape().d[2];
    for (auto& fm : fmaps)
      require(fm.shape() == Shape(cfg_.channels, h, w),
              "forward_window: feature map shapes differ");
    require(k_iters >= 1, "forward_window: need at least one iteration");

    auto f_src = bilinear_rows(g, fmaps[0], queries);  // [Q, C]

    // Auxiliary context: offsets from frame-0 self-similarity, sampled once
    // per window; their correlation pyramids do not depend on the iteration.
    std::vector<std::vector<Var<S>>> aux_pyr;
    if (cfg_.enable_sofe) {
      auto self_sim = self_similarity_crop(g, f_src, fmaps[0], h, w, queries,
                                           cfg_.self_sim_radius, cfg_.levels);
      auto offsets = sofe_.predict_offsets(c, self_sim);  // [Q, 2M]
      auto off_rows =
          copy_reshape(g, offsets, Shape(q * cfg_.aux_samples, 2));
      auto q_rep = expand_rows(g, queries, cfg_.aux_samples);
      auto aux_coords = add(g, q_rep, off_rows);          // [Q*M, 2]
      auto g_aux = bilinear_rows(g, fmaps[0], aux_coords);  // [Q*M, C]
      aux_pyr.resize(std::size_t(t));
      for (int i = 0; i < t; ++i) {
        auto sim = point_correlation(g, g_aux, fmaps[i]);
        aux_pyr[std::size_t(i)] = build_pyramid(g, sim, h, w, cfg_.levels);
      }
    }

    // Replicated initial state, rows ordered (frame, query).
    std::vector<S> x_state(std::size_t(t) * q * 2);
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < q; ++j) {
        x_state[(std::size_t(i) * q + j) * 2] = queries.val(2 * j);
        x_state[(std::size_t(i) * q + j) * 2 + 1] = queries.val(2 * j + 1);
      }
    auto x_src_rep = g.constant(Shape(t * q, 2), x_state.data());
    auto f = tile_rows(g, f_src, t);  // [(T*Q), C]

    const auto patch_off = tafa_.patch_offsets();
    WindowForward<S> out;
    out.t = t;
    out.q = q;
    for (int k = 0; k < k_iters; ++k) {
      auto xc = g.constant(Shape(t * q, 2), x_state.data());
      std::vector<Var<S>> corr_t(static_cast<std::size_t>(t));
      std::vector<Var<S>> patch_t;
      if (cfg_.enable_tafa) patch_t.resize(std::size_t(t));
      for (int i = 0; i < t; ++i) {
        auto f_i = rows_block(g, f, i * q, q);
        auto sim = point_correlation(g, f_i, fmaps[i]);
        auto pyr = build_pyramid(g, sim, h, w, cfg_.levels);
        auto xc_i = rows_block(g, xc, i * q, q);
        auto point_crop =
            crop_pyramid_at(g, pyr, h, w, xc_i, 1, cfg_.crop_radius);
        if (cfg_.enable_sofe) {
          auto aux_crop = crop_pyramid_at(g, aux_pyr[std::size_t(i)], h, w,
                                          xc_i, cfg_.aux_samples,
                                          cfg_.crop_radius);
          // rows (q, m) flatten row-major into per-query blocks, aux crops
          // in offset order followed by the point crop
          auto aux_cols = copy_reshape(
              g, aux_crop, Shape(q, cfg_.aux_samples * kCropLen));
          corr_t[std::size_t(i)] = concat_cols<S>(g, {aux_cols, point_crop});
        } else {
          corr_t[std::size_t(i)] = point_crop;
        }
        if (cfg_.enable_tafa) {
          auto coords = expand_rows(g, xc_i, tafa_.slots(), patch_off);
          patch_t[std::size_t(i)] = bilinear_rows(g, fmaps[i], coords);
        }
      }
      auto corr_in = concat_rows(g, corr_t);  // [(T*Q), 196 or 1960]
      Var<S> c_hat = cfg_.enable_sofe
                         ? sofe_.encode_correlations(c, corr_in)
                         : corr_in;
      Var<S> h_hat = f;
      if (cfg_.enable_tafa) {
        auto patch = concat_rows(g, patch_t);  // [(T*Q)*P, C]
        auto f_prime = tafa_.aggregate(c, c_hat, patch);
        h_hat = add(g, f, f_prime);
      }
      auto enc = posenc(g, sub(g, xc, x_src_rep));
      auto tokens = concat_cols<S>(g, {h_hat, c_hat, enc});
      auto [dx, df] = mixer_(c, tokens, q);
      auto x_next = add(g, xc, dx);
      out.traj.push_back(x_next);
      f = add(g, f, df);
      std::copy(x_next.data(), x_next.data() + x_next.n(), x_state.data());
    }
    out.f_final = f;
    out.vis_logits = vis_head_(c, f);
    return out;
  }

 private:
  ModelConfig cfg_;
  ParamStore<S> params_;
  Encoder<S> encoder_;
  SofeNet<S> sofe_;
  TafaNet<S> tafa_;
  MixerNet<S> mixer_;
  Linear<S> vis_head_;
};

// Inference result for one query over one window.
template <typename S>
struct QueryTrack {
  // iters[k][t] is the iteration-(k+1) estimate for frame t, image pixels.
  std::vector<std::vector<std::array<S, 2>>> iters;
  std::vector<S> vis;  // per-frame visibility probability
};

// Per-query inference: one graph per query so each result is bit-independent
// of the other queries in the batch. Queries are image-pixel coordinates on
// frame 0 of the window; fmaps are raw feature-map buffers [C*h*w].
template <typename S>
std::vector<QueryTrack<S>> track_window(
    const TrackModel<S>& model, const std::vector<const S*>& fmaps, int h,
    int w, const std::vector<std::array<S, 2>>& queries_px, int k_iters,
    int img_h, int img_w) {
  const auto& cfg = model.config();
  for (const auto& qp : queries_px) {
    if (!(qp[0] >= S(0) && qp[0] <= S(img_w - 1) && qp[1] >= S(0) &&
          qp[1] <= S(img_h - 1)))
      throw DataError("track_window: query (" + std::to_string(double(qp[0])) +
                      ", " + std::to_string(double(qp[1])) +
                      ") outside image bounds");
  }
  std::vector<QueryTrack<S>> out(queries_px.size());
  const S s = S(cfg.stride);
  const int t = cfg.t_window;
  for (std::size_t qi = 0; qi < queries_px.size(); ++qi) {
    Graph<S> g(false);
    Ctx<S> c{g, nullptr};
    std::vector<Var<S>> maps;
    maps.reserve(std::size_t(t));
    for (int i = 0; i < t; ++i)
      maps.push_back(g.view(fmaps[std::size_t(i)], Shape(cfg.channels, h, w)));
    const S grid[2] = {queries_px[qi][0] / s, queries_px[qi][1] / s};
    auto win = model.forward_window(c, maps, g.constant(Shape(1, 2), grid),
                                    k_iters);
    auto& qt = out[qi];
    qt.iters.resize(std::size_t(k_iters));
    for (int k = 0; k < k_iters; ++k) {
      qt.iters[std::size_t(k)].resize(std::size_t(t));
      for (int i = 0; i < t; ++i) {
        qt.iters[std::size_t(k)][std::size_t(i)] = {
            win.traj[std::size_t(k)].val(2 * i) * s,
            win.traj[std::size_t(k)].val(2 * i + 1) * s};
      }
    }
    qt.vis.resize(std::size_t(t));
    for (int i = 0; i < t; ++i)
      qt.vis[std::size_t(i)] =
          S(1) / (S(1) + std::exp(-win.vis_logits.val(i)));
  }
  return out;
}

}  // namespace ptrack
