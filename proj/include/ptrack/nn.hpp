#pragma once

// Parameter registry, initializers, gradient sinks and AdamW. Parameter order
// is registration order and defines the checkpoint layout, so module
// construction order must stay stable across versions.

#include <cmath>
#include <deque>
#include <string>
#include <vector>

#include "ptrack/rng.hpp"
#include "ptrack/tensor.hpp"

namespace ptrack {

template <typename S>
struct Param {
  std::string name;
  Shape shape;
  std::vector<S> value;
  int id = -1;
};

template <typename S>
class ParamStore {
 public:
  Param<S>& add(const std::string& name, Shape shape) {
    Param<S>& p = params_.emplace_back();
    p.name = name;
    p.shape = shape;
    p.value.assign(std::size_t(shape.numel()), S(0));
    p.id = int(params_.size()) - 1;
    return p;
  }

  int count() const { return int(params_.size()); }
  Param<S>& at(int id) { return params_[std::size_t(id)]; }
  const Param<S>& at(int id) const { return params_[std::size_t(id)]; }

  std::int64_t total_scalars() const {
    std::int64_t n = 0;
    for (auto& p : params_) n += p.shape.numel();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::deque<Param<S>> params_;
};

// One gradient buffer per parameter. Training merges per-thread sinks in
// thread order so a fixed thread count reproduces bitwise.
template <typename S>
class GradSink {
 public:
  explicit GradSink(const ParamStore<S>& store) {
    bufs_.resize(std::size_t(store.count()));
    for (int i = 0; i < store.count(); ++i)
      bufs_[std::size_t(i)].assign(std::size_t(store.at(i).shape.numel()), S(0));
  }
  S* buf(int id) { return bufs_[std::size_t(id)].data(); }
  const std::vector<S>& vec(int id) const { return bufs_[std::size_t(id)]; }
  std::vector<S>& vec(int id) { return bufs_[std::size_t(id)]; }
  void zero() {
    for (auto& b : bufs_) std::fill(b.begin(), b.end(), S(0));
  }
  void add_from(const GradSink& other) {
    for (std::size_t i = 0; i < bufs_.size(); ++i)
      for (std::size_t j = 0; j < bufs_[i].size(); ++j)
        bufs_[i][j] += other.bufs_[i][j];
  }

 private:
  std::vector<std::vector<S>> bufs_;
};

// Per-forward context: the graph plus where parameter gradients go.
template <typename S>
struct Ctx {
  Graph<S>& g;
  GradSink<S>* sink = nullptr;

  Var<S> P(const Param<S>& p) {
    return g.param(p.value.data(), p.shape, sink ? sink->buf(p.id) : nullptr);
  }
};

// ---- initializers ----------------------------------------------------------

template <typename S>
void init_uniform_fan_in(Param<S>& p, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(fan_in));
  for (auto& v : p.value) v = S(rng.uniform(-bound, bound));
}

template <typename S>
void init_normal(Param<S>& p, double sigma, Rng& rng) {
  for (auto& v : p.value) v = S(sigma * rng.normal());
}

template <typename S>
void init_const(Param<S>& p, S c) {
  std::fill(p.value.begin(), p.value.end(), c);
}

// ---- modules ---------------------------------------------------------------

template <typename S>
struct Linear {
  Param<S>* w = nullptr;  // [in, out]
  Param<S>* b = nullptr;

  Linear() = default;
  Linear(ParamStore<S>& ps, const std::string& name, int in, int out, Rng& rng,
         bool zero_init = false, bool bias = true) {
    w = &ps.add(name + ".w", Shape(in, out));
    if (bias) b = &ps.add(name + ".b", Shape(out));
    if (zero_init) {
      init_const(*w, S(0));
      if (b) init_const(*b, S(0));
    } else {
      init_uniform_fan_in(*w, in, rng);
      if (b) init_uniform_fan_in(*b, in, rng);
    }
  }

  Var<S> operator()(Ctx<S>& c, Var<S> x) const {
    return linear(c.g, x, c.P(*w), b ? c.P(*b) : Var<S>{});
  }
};

template <typename S>
struct Conv2d {
  Param<S>* w = nullptr;  // [out, in*kh*kw]
  Param<S>* b = nullptr;
  int kh = 0, kw = 0, stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(ParamStore<S>& ps, const std::string& name, int in, int out, int k,
         int stride_, int pad_, Rng& rng)
      : kh(k), kw(k), stride(stride_), pad(pad_) {
    w = &ps.add(name + ".w", Shape(out, in * k * k));
    b = &ps.add(name + ".b", Shape(out));
    init_uniform_fan_in(*w, in * k * k, rng);
    init_uniform_fan_in(*b, in * k * k, rng);
  }

  Var<S> operator()(Ctx<S>& c, Var<S> x) const {
    return conv2d(c.g, x, c.P(*w), c.P(*b), kh, kw, stride, pad);
  }
};

// Gamma/beta pair shared by layer_norm (per column) and row_norm (per row).
template <typename S>
struct Affine {
  Param<S>* gamma = nullptr;
  Param<S>* beta = nullptr;

  Affine() = default;
  Affine(ParamStore<S>& ps, const std::string& name, int n) {
    gamma = &ps.add(name + ".gamma", Shape(n));
    beta = &ps.add(name + ".beta", Shape(n));
    init_const(*gamma, S(1));
    init_const(*beta, S(0));
  }
};

// ---- optimizer -------------------------------------------------------------

// AdamW with decoupled weight decay and global-norm gradient clipping.
template <typename S>
class AdamW {
 public:
  explicit AdamW(const ParamStore<S>& store, double beta1 = 0.9,
                 double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(std::size_t(store.count()));
    v_.resize(std::size_t(store.count()));
    for (int i = 0; i < store.count(); ++i) {
      m_[std::size_t(i)].assign(std::size_t(store.at(i).shape.numel()), 0.0);
      v_[std::size_t(i)].assign(std::size_t(store.at(i).shape.numel()), 0.0);
    }
  }

  // Returns the pre-clip global gradient norm.
  double step(ParamStore<S>& store, GradSink<S>& grads, double lr,
              double weight_decay, double clip_norm) {
    double sq = 0.0;
    for (int i = 0; i < store.count(); ++i)
      for (S gv : grads.vec(i)) sq += double(gv) * double(gv);
    const double norm = std::sqrt(sq);
    double scale = 1.0;
    if (clip_norm > 0.0 && norm > clip_norm) scale = clip_norm / norm;

    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (int i = 0; i < store.count(); ++i) {
      auto& p = store.at(i);
      auto& gm = grads.vec(i);
      auto& mi = m_[std::size_t(i)];
      auto& vi = v_[std::size_t(i)];
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        const double gv = double(gm[j]) * scale;
        mi[j] = beta1_ * mi[j] + (1.0 - beta1_) * gv;
        vi[j] = beta2_ * vi[j] + (1.0 - beta2_) * gv * gv;
        const double mhat = mi[j] / bc1;
        const double vhat = vi[j] / bc2;
        double upd = mhat / (std::sqrt(vhat) + eps_) + weight_decay * double(p.value[j]);
        p.value[j] = S(double(p.value[j]) - lr * upd);
      }
    }
    return norm;
  }

  std::int64_t steps_taken() const { return t_; }

 private:
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

// Linear warmup to lr_max, cosine decay to lr_max/final_div.
inline double one_cycle_lr(std::int64_t step, std::int64_t total, double lr_max,
                           double warmup_frac, double final_div) {
  if (total <= 0) return lr_max;
  const auto warm = std::int64_t(std::ceil(warmup_frac * double(total)));
  if (step < warm && warm > 0)
    return lr_max * double(step + 1) / double(warm);
  const double lr_min = lr_max / final_div;
  const double span = double(std::max<std::int64_t>(total - warm, 1));
  const double t = double(step - warm) / span;
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(3.14159265358979323846 * t));
}

}  // namespace ptrack
