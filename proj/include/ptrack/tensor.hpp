#pragma once

// Tape autodiff over row-major buffers. Graphs are define-by-run: each op
// appends a node, backward replays the tape in reverse creation order, so a
// node's gradient is complete before its own closure runs. Scalar type is a
// template parameter; float is the training type, double drives the
// finite-difference checks.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ptrack/common.hpp"

namespace ptrack {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
struct Node {
  Shape shape;
  const S* vals = nullptr;
  std::vector<S> own_vals;
  std::vector<S> own_grad;   // allocated on first gradient contribution
  S* ext_grad = nullptr;     // parameter leaves accumulate into a sink
  std::function<void()> back;
  bool needs_grad = false;

  std::int64_t n() const { return shape.numel(); }
  int rows() const { return shape.rows(); }
  int cols() const { return shape.cols(); }

  S* grad_buf() {
    if (ext_grad) return ext_grad;
    if (own_grad.empty()) own_grad.assign(std::size_t(n()), S(0));
    return own_grad.data();
  }
  bool grad_touched() const { return ext_grad || !own_grad.empty(); }

  Eigen::Map<const RowMat<S>> cm() const {
    return {vals, rows(), cols()};
  }
  Eigen::Map<RowMat<S>> gm() {
    return {grad_buf(), rows(), cols()};
  }
};

template <typename S>
struct Var {
  Node<S>* p = nullptr;

  const Shape& shape() const { return p->shape; }
  const S* data() const { return p->vals; }
  std::int64_t n() const { return p->n(); }
  S val(std::int64_t i = 0) const { return p->vals[i]; }
  explicit operator bool() const { return p != nullptr; }
};

template <typename S>
class Graph {
 public:
  explicit Graph(bool grad = true) : grad_(grad) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_; }
  std::size_t size() const { return nodes_.size(); }

  Node<S>* alloc(Shape s) {
    Node<S>& nd = nodes_.emplace_back();
    nd.shape = s;
    nd.own_vals.resize(std::size_t(s.numel()));
    nd.vals = nd.own_vals.data();
    return &nd;
  }

  Var<S> constant(Shape s, const S* src) {
    Node<S>* nd = alloc(s);
    std::copy(src, src + s.numel(), nd->own_vals.data());
    return {nd};
  }
  Var<S> constant(Shape s, std::initializer_list<S> v) {
    require(std::int64_t(v.size()) == s.numel(), "constant: size mismatch");
    Node<S>* nd = alloc(s);
    std::copy(v.begin(), v.end(), nd->own_vals.data());
    return {nd};
  }
  Var<S> zeros(Shape s) {
    return {alloc(s)};
  }

  // Borrow external storage; the caller keeps it alive past backward().
  Var<S> view(const S* data, Shape s) {
    Node<S>& nd = nodes_.emplace_back();
    nd.shape = s;
    nd.vals = data;
    return {&nd};
  }

  // Leaf whose gradient accumulates into grad_sink (may be null at inference).
  Var<S> param(const S* data, Shape s, S* grad_sink) {
    Node<S>& nd = nodes_.emplace_back();
    nd.shape = s;
    nd.vals = data;
    if (grad_ && grad_sink) {
      nd.ext_grad = grad_sink;
      nd.needs_grad = true;
    }
    return {&nd};
  }

  // Leaf with external values and an owned gradient, read out after backward
  // (feature-map leaves shared between the encoder and refinement graphs).
  Var<S> leaf(const S* data, Shape s) {
    Node<S>& nd = nodes_.emplace_back();
    nd.shape = s;
    nd.vals = data;
    nd.needs_grad = grad_;
    return {&nd};
  }

  void backward(Var<S> loss, S seed = S(1)) {
    require(grad_, "backward on a no-grad graph");
    require(loss.n() == 1, "backward expects a scalar loss");
    loss.p->grad_buf()[0] += seed;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->back && it->grad_touched()) it->back();
    }
  }

 private:
  std::deque<Node<S>> nodes_;  // deque: node addresses stay stable
  bool grad_;
};

// ---- elementwise -----------------------------------------------------------

template <typename S, typename Fwd, typename Bwd>
Var<S> unary_elemwise(Graph<S>& g, Var<S> x, Fwd f, Bwd dfdx) {
  Node<S>* nd = g.alloc(x.shape());
  const S* xv = x.data();
  S* yv = nd->own_vals.data();
  const std::int64_t n = x.n();
  for (std::int64_t i = 0; i < n; ++i) yv[i] = f(xv[i]);
  if (g.grad_enabled() && x.p->needs_grad) {
    nd->needs_grad = true;
    Node<S>* xp = x.p;
    nd->back = [nd, xp, dfdx] {
      const S* dy = nd->grad_buf();
      const S* xv2 = xp->vals;
      const S* yv2 = nd->vals;
      S* dx = xp->grad_buf();
      const std::int64_t m = nd->n();
      for (std::int64_t i = 0; i < m; ++i) dx[i] += dy[i] * dfdx(xv2[i], yv2[i]);
    };
  }
  return {nd};
}

template <typename S>
Var<S> relu(Graph<S>& g, Var<S> x) {
  return unary_elemwise(
      g, x, [](S v) { return v > S(0) ? v : S(0); },
      [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

template <typename S>
Var<S> gelu(Graph<S>& g, Var<S> x) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return unary_elemwise(
      g, x,
      [](S v) {
        return S(0.5) * v * S(1.0 + std::erf(double(v) * inv_sqrt2));
      },
      [](S v, S) {
        double phi = S(0.5) * (1.0 + std::erf(double(v) * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * double(v) * double(v));
        return S(phi + double(v) * pdf);
      });
}

template <typename S>
Var<S> sigmoid(Graph<S>& g, Var<S> x) {
  return unary_elemwise(
      g, x, [](S v) { return S(1) / (S(1) + std::exp(-v)); },
      [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Var<S> scale(Graph<S>& g, Var<S> x, S c) {
  return unary_elemwise(g, x, [c](S v) { return c * v; },
                        [c](S, S) { return c; });
}

template <typename S, typename Combine>
Var<S> binary_elemwise(Graph<S>& g, Var<S> a, Var<S> b, Combine f, S da, S db) {
  require(a.n() == b.n(), "elementwise: size mismatch " + a.shape().str() +
                              " vs " + b.shape().str());
  Node<S>* nd = g.alloc(a.shape());
  const S* av = a.data();
  const S* bv = b.data();
  S* yv = nd->own_vals.data();
  const std::int64_t n = a.n();
  for (std::int64_t i = 0; i < n; ++i) yv[i] = f(av[i], bv[i]);
  if (g.grad_enabled() && (a.p->needs_grad || b.p->needs_grad)) {
    nd->needs_grad = true;
    Node<S>*ap = a.p, *bp = b.p;
    nd->back = [nd, ap, bp, da, db] {
      const S* dy = nd->grad_buf();
      const std::int64_t m = nd->n();
      if (ap->needs_grad) {
        S* dxa = ap->grad_buf();
        for (std::int64_t i = 0; i < m; ++i) dxa[i] += da * dy[i];
      }
      if (bp->needs_grad) {
        S* dxb = bp->grad_buf();
        for (std::int64_t i = 0; i < m; ++i) dxb[i] += db * dy[i];
      }
    };
  }
  return {nd};
}

template <typename S>
Var<S> add(Graph<S>& g, Var<S> a, Var<S> b) {
  return binary_elemwise(g, a, b, [](S x, S y) { return x + y; }, S(1), S(1));
}

template <typename S>
Var<S> sub(Graph<S>& g, Var<S> a, Var<S> b) {
  return binary_elemwise(g, a, b, [](S x, S y) { return x - y; }, S(1), S(-1));
}

template <typename S>
Var<S> hadamard(Graph<S>& g, Var<S> a, Var<S> b) {
  require(a.n() == b.n(), "hadamard: size mismatch");
  Node<S>* nd = g.alloc(a.shape());
  const S* av = a.data();
  const S* bv = b.data();
  S* yv = nd->own_vals.data();
  const std::int64_t n = a.n();
  for (std::int64_t i = 0; i < n; ++i) yv[i] = av[i] * bv[i];
  if (g.grad_enabled() && (a.p->needs_grad || b.p->needs_grad)) {
    nd->needs_grad = true;
    Node<S>*ap = a.p, *bp = b.p;
    nd->back = [nd, ap, bp] {
      const S* dy = nd->grad_buf();
      const std::int64_t m = nd->n();
      if (ap->needs_grad) {
        S* da = ap->grad_buf();
        const S* bv2 = bp->vals;
        for (std::int64_t i = 0; i < m; ++i) da[i] += dy[i] * bv2[i];
      }
      if (bp->needs_grad) {
        S* db = bp->grad_buf();
        const S* av2 = ap->vals;
        for (std::int64_t i = 0; i < m; ++i) db[i] += dy[i] * av2[i];
      }
    };
  }
  return {nd};
}

template <typename S>
Var<S> stop_grad(Graph<S>& g, Var<S> x) {
  Node<S>* nd = g.alloc(x.shape());
  std::copy(x.data(), x.data() + x.n(), nd->own_vals.data());
  return {nd};
}

// ---- linear algebra --------------------------------------------------------

template <typename S>
Var<S> matmul(Graph<S>& g, Var<S> a, Var<S> b) {
  const int m = a.p->rows(), k = a.p->cols(), n = b.p->cols();
  require(b.p->rows() == k, "matmul: inner dims " + a.shape().str() + " x " +
                                b.shape().str());
  Node<S>* nd = g.alloc(Shape(m, n));
  Eigen::Map<RowMat<S>>(nd->own_vals.data(), m, n).noalias() =
      a.p->cm() * b.p->cm();
  if (g.grad_enabled() && (a.p->needs_grad || b.p->needs_grad)) {
    nd->needs_grad = true;
    Node<S>*ap = a.p, *bp = b.p;
    nd->back = [nd, ap, bp] {
      auto dy = Eigen::Map<const RowMat<S>>(nd->grad_buf(), nd->rows(), nd->cols());
      if (ap->needs_grad) ap->gm().noalias() += dy * bp->cm().transpose();
      if (bp->needs_grad) bp->gm().noalias() += ap->cm().transpose() * dy;
    };
  }
  return {nd};
}

// y = x * W (+ bias per output column). W is stored [in, out].
template <typename S>
Var<S> linear(Graph<S>& g, Var<S> x, Var<S> w, Var<S> bias) {
  const int m = x.p->rows(), k = x.p->cols(), n = w.p->cols();
  require(w.p->rows() == k, "linear: weight rows != input cols");
  Node<S>* nd = g.alloc(Shape(m, n));
  auto y = Eigen::Map<RowMat<S>>(nd->own_vals.data(), m, n);
  y.noalias() = x.p->cm() * w.p->cm();
  if (bias) {
    require(bias.n() == n, "linear: bias size");
    y.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(
        bias.data(), n);
  }
  bool need = x.p->needs_grad || w.p->needs_grad || (bias && bias.p->needs_grad);
  if (g.grad_enabled() && need) {
    nd->needs_grad = true;
    Node<S>*xp = x.p, *wp = w.p, *bp = bias ? bias.p : nullptr;
    nd->back = [nd, xp, wp, bp] {
      auto dy = Eigen::Map<const RowMat<S>>(nd->grad_buf(), nd->rows(), nd->cols());
      if (xp->needs_grad) xp->gm().noalias() += dy * wp->cm().transpose();
      if (wp->needs_grad) wp->gm().noalias() += xp->cm().transpose() * dy;
      if (bp && bp->needs_grad) {
        Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(bp->grad_buf(),
                                                        nd->cols()) +=
            dy.colwise().sum();
      }
    };
  }
  return {nd};
}

// ---- data movement ---------------------------------------------------------

template <typename S>
Var<S> copy_reshape(Graph<S>& g, Var<S> x, Shape s) {
  require(s.numel() == x.n(), "reshape: numel mismatch");
  Node<S>* nd = g.alloc(s);
  std::copy(x.data(), x.data() + x.n(), nd->own_vals.data());
  if (g.grad_enabled() && x.p->needs_grad) {
    nd->needs_grad = true;
    Node<S>* xp = x.p;
    nd->back = [nd, xp] {
      const S* dy = nd->grad_buf();
      S* dx = xp->grad_buf();
      const std::int64_t m = nd->n();
      for (std::int64_t i = 0; i < m; ++i) dx[i] += dy[i];
    };
  }
  return {nd};
}

template <typename S>
Var<S> tile_rows(Graph<S>& g, Var<S> x, int times) {
  const int r = x.p->rows(), c = x.p->cols();
  Node<S>* nd = g.alloc(Shape(r * times, c));
  for (int t = 0; t < times; ++t)
    std::copy(x.data(), x.data() + std::int64_t(r) * c,
              nd->own_vals.data() + std::int64_t(t) * r * c);
  if (g.grad_enabled() && x.p->needs_grad) {
    nd->needs_grad = true;
    Node<S>* xp = x.p;
    nd->back = [nd, xp, times, r, c] {
      const S* dy = nd->grad_buf();
      S* dx = xp->grad_buf();
      const std::int64_t block = std::int64_t(r) * c;
      for (int t = 0; t < times; ++t)
        for (std::int64_t i = 0; i < block; ++i) dx[i] += dy[t * block + i];
    };
  }
  return {nd};
}

template <typename S>
Var<S> rows_block(Graph<S>& g, Var<S> x, int r0, int count) {
  const int c = x.p->cols();
  require(r0 >= 0 && r0 + count <= x.p->rows(), "rows_block: out of range");
  Node<S>* nd = g.alloc(Shape(count, c));
  std::copy(x.data() + std::int64_t(r0) * c,
            x.data() + std::int64_t(r0 + count) * c, nd->own_vals.data());
  if (g.grad_enabled() && x.p->needs_grad) {
    nd->needs_grad = true;
    Node<S>* xp = x.p;
    nd->back = [nd, xp, r0, c] {
      const S* dy = nd->grad_buf();
      S* dx = xp->grad_buf() + std::int64_t(r0) * c;
      const std::int64_t m = nd->n();
      for (std::int64_t i = 0; i < m; ++i) dx[i] += dy[i];
    };
  }
  return {nd};
}

template <typename S>
Var<S> concat_cols(Graph<S>& g, const std::vector<Var<S>>& xs) {
  require(!xs.empty(), "concat_cols: empty");
  const int r = xs[0].p->rows();
  int ctot = 0;
  for (auto& v : xs) {
    require(v.p->rows() == r, "concat_cols: row mismatch");
    ctot += v.p->cols();
  }
  Node<S>* nd = g.alloc(Shape(r, ctot));
  bool need = false;
  int off = 0;
  for (auto& v : xs) {
    const int c = v.p->cols();
    for (int i = 0; i < r; ++i)
      std::copy(v.data() + std::int64_t(i) * c, v.data() + std::int64_t(i + 1) * c,
                nd->own_vals.data() + std::int64_t(i) * ctot + off);
    off += c;
    need = need || v.p->needs_grad;
  }
  if (g.grad_enabled() && need) {
    nd->needs_grad = true;
    std::vector<Node<S>*> ps;
    for (auto& v : xs) ps.push_back(v.p);
    nd->back = [nd, ps, r, ctot] {
      const S* dy = nd->grad_buf();
      int off2 = 0;
      for (Node<S>* p : ps) {
        const int c = p->cols();
        if (p->needs_grad) {
          S* dx = p->grad_buf();
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
              dx[std::int64_t(i) * c + j] += dy[std::int64_t(i) * ctot + off2 + j];
        }
        off2 += c;
      }
    };
  }
  return {nd};
}

template <typename S>
Var<S> concat_rows(Graph<S>& g, const std::vector<Var<S>>& xs) {
  require(!xs.empty(), "concat_rows: empty");
  const int c = xs[0].p->cols();
  int rtot = 0;
  for (auto& v : xs) {
    require(v.p->cols() == c, "concat_rows: col mismatch");
    rtot += v.p->rows();
  }
  Node<S>* nd = g.alloc(Shape(rtot, c));
  bool need = false;
  std::int64_t off = 0;
  for (auto& v : xs) {
    std::copy(v.data(), v.data() + v.n(), nd->own_vals.data() + off);
    off += v.n();
    need = need || v.p->needs_grad;
  }
  if (g.grad_enabled() && need) {
    nd->needs_grad = true;
    std::vector<Node<S>*> ps;
    for (auto& v : xs) ps.push_back(v.p);
    nd->back = [nd, ps] {
      const S* dy = nd->grad_buf();
      std::int64_t off2 = 0;
      for (Node<S>* p : ps) {
        if (p->needs_grad) {
          S* dx = p->grad_buf();
          for (std::int64_t i = 0; i < p->n(); ++i) dx[i] += dy[off2 + i];
        }
        off2 += p->n();
      }
    };
  }
  return {nd};
}

// y[r*times+p, :] = scale * x[r, :] + offsets[p, :]  (offsets may be empty)
template <typename S>
Var<S> expand_rows(Graph<S>& g, Var<S> x, int times,
                   const std::vector<S>& offsets = {}, S sc = S(1)) {
  const int r = x.p->rows(), c = x.p->cols();
  require(offsets.empty() || std::int64_t(offsets.size()) == std::int64_t(times) * c,
          "expand_rows: offsets size");
  Node<S>* nd = g.alloc(Shape(r * times, c));
  S* yv = nd->own_vals.data();
  const S* xv = x.data();
  for (int i = 0; i < r; ++i)
    for (int p = 0; p < times; ++p)
      for (int j = 0; j < c; ++j)
        yv[(std::int64_t(i) * times + p) * c + j] =
            sc * xv[std::int64_t(i) * c + j] +
            (offsets.empty() ? S(0) : offsets[std::int64_t(p) * c + j]);
  if (g.grad_enabled() && x.p->needs_grad) {
    nd->needs_grad = true;
    Node<S>* xp = x.p;
    nd->back = [nd, xp, times, r, c, sc] {
      const S* dy = nd->grad_buf();
      S* dx = xp->grad_buf();
      for (int i = 0; i < r; ++i)
        for (int p = 0; p < times; ++p)
          for (int j = 0; j < c; ++j)
            dx[std::int64_t(i) * c + j] +=
                sc * dy[(std::int64_t(i) * times + p) * c + j];
    };
  }
  return {nd};
}

// Token transpose for frame-token mixing over batched queries. Rows of x are
// (t-major, q-minor) tokens: y[q*h + j, t] = x[t*q_count + q, j].
template <typename S>
Var<S> tokens_to_rows(Graph<S>& g, Var<S> x, int t_count, int q_count) {
  const int hdim = x.p->cols();
  require(x.p->rows() == t_count * q_count, "tokens_to_rows: row count");
  Node<S>* nd = g.alloc(Shape(q_count * hdim, t_count));
  const S* xv = x.data();
  S* yv = nd->own_vals.data();
  for (int t = 0; t < t_count; ++t)
    for (int q = 0; q < q_count; ++q) {
      const S* src = xv + (std::int64_t(t) * q_count + q) * hdim;
      for (int j = 0; j < hdim; ++j)
        yv[(std::int64_t(q) * hdim + j) * t_count + t] = src[j];
    }
  if (g.grad_enabled() && x.p->needs_grad) {
    nd->needs_grad = true;
    Node<S>* xp = x.p;
    nd->back = [nd, xp, t_count, q_count, hdim] {
      const S* dy = nd->grad_buf();
      S* dx = xp->grad_buf();
      for (int t = 0; t < t_count; ++t)
        for (int q = 0; q < q_count; ++q) {
          S* dst = dx + (std::int64_t(t) * q_count + q) * hdim;
          for (int j = 0; j < hdim; ++j)
            dst[j] += dy[(std::int64_t(q) * hdim + j) * t_count + t];
        }
    };
  }
  return {nd};
}

// Inverse of tokens_to_rows: x is [q_count*h, t_count].
template <typename S>
Var<S> rows_to_tokens(Graph<S>& g, Var<S> x, int t_count, int q_count) {
  require(x.p->cols() == t_count && x.p->rows() % q_count == 0,
          "rows_to_tokens: shape");
  const int hdim = x.p->rows() / q_count;
  Node<S>* nd = g.alloc(Shape(t_count * q_count, hdim));
  const S* xv = x.data();
  S* yv = nd->own_vals.data();
  for (int t = 0; t < t_count; ++t)
    for (int q = 0; q < q_count; ++q) {
      S* dst = yv + (std::int64_t(t) * q_count + q) * hdim;
      for (int j = 0; j < hdim; ++j)
        dst[j] = xv[(std::int64_t(q) * hdim + j) * t_count + t];
    }
  if (g.grad_enabled() && x.p->needs_grad) {
    nd->needs_grad = true;
    Node<S>* xp = x.p;
    nd->back = [nd, xp, t_count, q_count, hdim] {
      const S* dy = nd->grad_buf();
      S* dx = xp->grad_buf();
      for (int t = 0; t < t_count; ++t)
        for (int q = 0; q < q_count; ++q) {
          const S* src = dy + (std::int64_t(t) * q_count + q) * hdim;
          for (int j = 0; j < hdim; ++j)
            dx[(std::int64_t(q) * hdim + j) * t_count + t] += src[j];
        }
    };
  }
  return {nd};
}

template <typename S>
Var<S> rowsum(Graph<S>& g, Var<S> x) {
  const int r = x.p->rows(), c = x.p->cols();
  Node<S>* nd = g.alloc(Shape(r, 1));
  for (int i = 0; i < r; ++i) {
    S s = 0;
    const S* row = x.data() + std::int64_t(i) * c;
    for (int j = 0; j < c; ++j) s += row[j];
    nd->own_vals[i] = s;
  }
  if (g.grad_enabled() && x.p->needs_grad) {
    nd->needs_grad = true;
    Node<S>* xp = x.p;
    nd->back = [nd, xp, r, c] {
      const S* dy = nd->grad_buf();
      S* dx = xp->grad_buf();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) dx[std::int64_t(i) * c + j] += dy[i];
    };
  }
  return {nd};
}

// ---- normalization ---------------------------------------------------------

// Per-row statistics, per-column affine (transformer layer norm).
template <typename S>
Var<S> layer_norm(Graph<S>& g, Var<S> x, Var<S> gamma, Var<S> beta,
                  S eps = S(1e-5)) {
  const int r = x.p->rows(), c = x.p->cols();
  require(gamma.n() == c && beta.n() == c, "layer_norm: affine size");
  Node<S>* nd = g.alloc(x.shape());
  auto xhat = std::make_shared<std::vector<S>>(std::size_t(x.n()));
  auto istd = std::make_shared<std::vector<S>>(std::size_t(r));
  const S* xv = x.data();
  const S* gv = gamma.data();
  const S* bv = beta.data();
  S* yv = nd->own_vals.data();
  for (int i = 0; i < r; ++i) {
    const S* row = xv + std::int64_t(i) * c;
    S mu = 0;
    for (int j = 0; j < c; ++j) mu += row[j];
    mu /= S(c);
    S var = 0;
    for (int j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= S(c);
    const S is = S(1) / std::sqrt(var + eps);
    (*istd)[i] = is;
    for (int j = 0; j < c; ++j) {
      const S xh = (row[j] - mu) * is;
      (*xhat)[std::int64_t(i) * c + j] = xh;
      yv[std::int64_t(i) * c + j] = gv[j] * xh + bv[j];
    }
  }
  bool need = x.p->needs_grad || gamma.p->needs_grad || beta.p->needs_grad;
  if (g.grad_enabled() && need) {
    nd->needs_grad = true;
    Node<S>*xp = x.p, *gp = gamma.p, *bp = beta.p;
    nd->back = [nd, xp, gp, bp, xhat, istd, r, c] {
      const S* dy = nd->grad_buf();
      const S* gv2 = gp->vals;
      S* dgamma = gp->needs_grad ? gp->grad_buf() : nullptr;
      S* dbeta = bp->needs_grad ? bp->grad_buf() : nullptr;
      S* dx = xp->needs_grad ? xp->grad_buf() : nullptr;
      for (int i = 0; i < r; ++i) {
        const S* dyr = dy + std::int64_t(i) * c;
        const S* xhr = xhat->data() + std::int64_t(i) * c;
        if (dgamma || dbeta) {
          for (int j = 0; j < c; ++j) {
            if (dgamma) dgamma[j] += dyr[j] * xhr[j];
            if (dbeta) dbeta[j] += dyr[j];
          }
        }
        if (dx) {
          S m1 = 0, m2 = 0;
          for (int j = 0; j < c; ++j) {
            const S t = dyr[j] * gv2[j];
            m1 += t;
            m2 += t * xhr[j];
          }
          m1 /= S(c);
          m2 /= S(c);
          const S is = (*istd)[i];
          S* dxr = dx + std::int64_t(i) * c;
          for (int j = 0; j < c; ++j)
            dxr[j] += is * (dyr[j] * gv2[j] - m1 - xhr[j] * m2);
        }
      }
    };
  }
  return {nd};
}

// Per-row statistics and per-row affine: instance norm over [C, H*W] with one
// (gamma, beta) per channel row.
template <typename S>
Var<S> row_norm(Graph<S>& g, Var<S> x, Var<S> gamma, Var<S> beta,
                S eps = S(1e-5)) {
  const int r = x.p->rows(), c = x.p->cols();
  require(gamma.n() == r && beta.n() == r, "row_norm: affine size");
  Node<S>* nd = g.alloc(x.shape());
  auto xhat = std::make_shared<std::vector<S>>(std::size_t(x.n()));
  auto istd = std::make_shared<std::vector<S>>(std::size_t(r));
  const S* xv = x.data();
  const S* gv = gamma.data();
  const S* bv = beta.data();
  S* yv = nd->own_vals.data();
  for (int i = 0; i < r; ++i) {
    const S* row = xv + std::int64_t(i) * c;
    S mu = 0;
    for (int j = 0; j < c; ++j) mu += row[j];
    mu /= S(c);
    S var = 0;
    for (int j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= S(c);
    const S is = S(1) / std::sqrt(var + eps);
    (*istd)[i] = is;
    for (int j = 0; j < c; ++j) {
      const S xh = (row[j] - mu) * is;
      (*xhat)[std::int64_t(i) * c + j] = xh;
      yv[std::int64_t(i) * c + j] = gv[i] * xh + bv[i];
    }
  }
  bool need = x.p->needs_grad || gamma.p->needs_grad || beta.p->needs_grad;
  if (g.grad_enabled() && need) {
    nd->needs_grad = true;
    Node<S>*xp = x.p, *gp = gamma.p, *bp = beta.p;
    nd->back = [nd, xp, gp, bp, xhat, istd, r, c] {
      const S* dy = nd->grad_buf();
      const S* gv2 = gp->vals;
      S* dgamma = gp->needs_grad ? gp->grad_buf() : nullptr;
      S* dbeta = bp->needs_grad ? bp->grad_buf() : nullptr;
      S* dx = xp->needs_grad ? xp->grad_buf() : nullptr;
      for (int i = 0; i < r; ++i) {
        const S* dyr = dy + std::int64_t(i) * c;
        const S* xhr = xhat->data() + std::int64_t(i) * c;
        S sum_dy = 0, sum_dyxh = 0;
        for (int j = 0; j < c; ++j) {
          sum_dy += dyr[j];
          sum_dyxh += dyr[j] * xhr[j];
        }
        if (dgamma) dgamma[i] += sum_dyxh;
        if (dbeta) dbeta[i] += sum_dy;
        if (dx) {
          const S m1 = sum_dy / S(c), m2 = sum_dyxh / S(c);
          const S gis = gv2[i] * (*istd)[i];
          S* dxr = dx + std::int64_t(i) * c;
          for (int j = 0; j < c; ++j)
            dxr[j] += gis * (dyr[j] - m1 - xhr[j] * m2);
        }
      }
    };
  }
  return {nd};
}

template <typename S>
Var<S> softmax_rows(Graph<S>& g, Var<S> x) {
  const int r = x.p->rows(), c = x.p->cols();
  Node<S>* nd = g.alloc(x.shape());
  const S* xv = x.data();
  S* yv = nd->own_vals.data();
  for (int i = 0; i < r; ++i) {
    const S* row = xv + std::int64_t(i) * c;
    S* out = yv + std::int64_t(i) * c;
    S mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    S z = 0;
    for (int j = 0; j < c; ++j) {
      out[j] = std::exp(row[j] - mx);
      z += out[j];
    }
    const S iz = S(1) / z;
    for (int j = 0; j < c; ++j) out[j] *= iz;
  }
  if (g.grad_enabled() && x.p->needs_grad) {
    nd->needs_grad = true;
    Node<S>* xp = x.p;
    nd->back = [nd, xp, r, c] {
      const S* dy = nd->grad_buf();
      const S* yv2 = nd->vals;
      S* dx = xp->grad_buf();
      for (int i = 0; i < r; ++i) {
        const S* dyr = dy + std::int64_t(i) * c;
        const S* yr = yv2 + std::int64_t(i) * c;
        S dot = 0;
        for (int j = 0; j < c; ++j) dot += dyr[j] * yr[j];
        S* dxr = dx + std::int64_t(i) * c;
        for (int j = 0; j < c; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
      }
    };
  }
  return {nd};
}

// ---- convolution and pooling ----------------------------------------------

namespace convdet {

// cols is [oh*ow, cin*kh*kw]; zero padding.
template <typename S>
void im2col(const S* x, int cin, int h, int w, int kh, int kw, int stride,
            int pad, int oh, int ow, S* cols) {
  const int kk = cin * kh * kw;
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      S* dst = cols + (std::int64_t(oy) * ow + ox) * kk;
      for (int ci = 0; ci < cin; ++ci) {
        const S* plane = x + std::int64_t(ci) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * stride - pad + ky;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox * stride - pad + kx;
            *dst++ = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                         ? plane[std::int64_t(iy) * w + ix]
                         : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const S* cols, int cin, int h, int w, int kh, int kw,
                int stride, int pad, int oh, int ow, S* dx) {
  const int kk = cin * kh * kw;
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const S* src = cols + (std::int64_t(oy) * ow + ox) * kk;
      for (int ci = 0; ci < cin; ++ci) {
        S* plane = dx + std::int64_t(ci) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * stride - pad + ky;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (iy >= 0 && iy < h && ix >= 0 && ix < w)
              plane[std::int64_t(iy) * w + ix] += *src;
            ++src;
          }
        }
      }
    }
  }
}

}  // namespace convdet

// x: [cin, h, w]; w: [cout, cin*kh*kw]; bias: [cout] or empty.
// im2col is recomputed in backward to keep activation memory flat.
template <typename S>
Var<S> conv2d(Graph<S>& g, Var<S> x, Var<S> w, Var<S> bias, int kh, int kw,
              int stride, int pad) {
  require(x.shape().nd == 3, "conv2d: input must be [c,h,w]");
  const int cin = x.shape().d[0], h = x.shape().d[1], ww = x.shape().d[2];
  const int cout = w.p->rows();
  require(w.p->cols() == cin * kh * kw, "conv2d: weight shape");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (ww + 2 * pad - kw) / stride + 1;
  require(oh > 0 && ow > 0, "conv2d: output collapsed");
  Node<S>* nd = g.alloc(Shape(cout, oh, ow));
  const int kk = cin * kh * kw;
  RowMat<S> cols(oh * ow, kk);
  convdet::im2col(x.data(), cin, h, ww, kh, kw, stride, pad, oh, ow,
                  cols.data());
  // y^T = cols * W^T, stored transposed into [cout, oh*ow]
  RowMat<S> yt(oh * ow, cout);
  yt.noalias() = cols * w.p->cm().transpose();
  auto y = Eigen::Map<RowMat<S>>(nd->own_vals.data(), cout, oh * ow);
  y = yt.transpose();
  if (bias) {
    require(bias.n() == cout, "conv2d: bias size");
    y.colwise() += Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(
        bias.data(), cout);
  }
  bool need = x.p->needs_grad || w.p->needs_grad || (bias && bias.p->needs_grad);
  if (g.grad_enabled() && need) {
    nd->needs_grad = true;
    Node<S>*xp = x.p, *wp = w.p, *bp = bias ? bias.p : nullptr;
    nd->back = [nd, xp, wp, bp, cin, h, ww, kh, kw, stride, pad, oh, ow, kk] {
      const int cout2 = nd->shape.d[0];
      auto dy = Eigen::Map<const RowMat<S>>(nd->grad_buf(), cout2, oh * ow);
      RowMat<S> cols(oh * ow, kk);
      convdet::im2col(xp->vals, cin, h, ww, kh, kw, stride, pad, oh, ow,
                      cols.data());
      RowMat<S> dyt = dy.transpose();  // [oh*ow, cout]
      if (wp->needs_grad) wp->gm().noalias() += dyt.transpose() * cols;
      if (bp && bp->needs_grad) {
        Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>(bp->grad_buf(), cout2) +=
            dy.rowwise().sum();
      }
      if (xp->needs_grad) {
        RowMat<S> dcols(oh * ow, kk);
        dcols.noalias() = dyt * wp->cm();
        convdet::col2im_add(dcols.data(), cin, h, ww, kh, kw, stride, pad, oh,
                            ow, xp->grad_buf());
      }
    };
  }
  return {nd};
}

// Per-row 2x2 average pooling with ceil shapes; partial windows average only
// the elements that exist. Rows are independent (h, w) maps.
template <typename S>
Var<S> avgpool_rows(Graph<S>& g, Var<S> x, int h, int w) {
  const int r = x.p->rows();
  require(x.p->cols() == h * w, "avgpool_rows: map size");
  const int ch = (h + 1) / 2, cw = (w + 1) / 2;
  Node<S>* nd = g.alloc(Shape(r, ch * cw));
  const S* xv = x.data();
  S* yv = nd->own_vals.data();
  for (int i = 0; i < r; ++i) {
    const S* m = xv + std::int64_t(i) * h * w;
    S* out = yv + std::int64_t(i) * ch * cw;
    for (int oy = 0; oy < ch; ++oy) {
      for (int ox = 0; ox < cw; ++ox) {
        S s = 0;
        int cnt = 0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int iy = 2 * oy + dy, ix = 2 * ox + dx;
            if (iy < h && ix < w) {
              s += m[std::int64_t(iy) * w + ix];
              ++cnt;
            }
          }
        }
        out[std::int64_t(oy) * cw + ox] = s / S(cnt);
      }
    }
  }
  if (g.grad_enabled() && x.p->needs_grad) {
    nd->needs_grad = true;
    Node<S>* xp = x.p;
    nd->back = [nd, xp, r, h, w, ch, cw] {
      const S* dy = nd->grad_buf();
      S* dx = xp->grad_buf();
      for (int i = 0; i < r; ++i) {
        const S* dyr = dy + std::int64_t(i) * ch * cw;
        S* dxr = dx + std::int64_t(i) * h * w;
        for (int oy = 0; oy < ch; ++oy) {
          for (int ox = 0; ox < cw; ++ox) {
            int cnt = 0;
            for (int dy2 = 0; dy2 < 2; ++dy2)
              for (int dx2 = 0; dx2 < 2; ++dx2)
                if (2 * oy + dy2 < h && 2 * ox + dx2 < w) ++cnt;
            const S gshare = dyr[std::int64_t(oy) * cw + ox] / S(cnt);
            for (int dy2 = 0; dy2 < 2; ++dy2) {
              for (int dx2 = 0; dx2 < 2; ++dx2) {
                const int iy = 2 * oy + dy2, ix = 2 * ox + dx2;
                if (iy < h && ix < w) dxr[std::int64_t(iy) * w + ix] += gshare;
              }
            }
          }
        }
      }
    };
  }
  return {nd};
}

// ---- sampling --------------------------------------------------------------

namespace sampdet {

// Bilinear tap with clamp-to-edge. Weights and corner indices are shared by
// forward and both backward passes.
struct Tap {
  int x0, x1, y0, y1;
  double fx, fy;
  bool in_x, in_y;  // raw coordinate strictly inside (0, dim-1)
};

inline Tap make_tap(double sx, double sy, int h, int w) {
  Tap t;
  t.in_x = sx > 0.0 && sx < double(w - 1);
  t.in_y = sy > 0.0 && sy < double(h - 1);
  sx = std::min(std::max(sx, 0.0), double(w - 1));
  sy = std::min(std::max(sy, 0.0), double(h - 1));
  t.x0 = int(std::floor(sx));
  t.y0 = int(std::floor(sy));
  t.x0 = std::min(t.x0, w - 1);
  t.y0 = std::min(t.y0, h - 1);
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.y1 = std::min(t.y0 + 1, h - 1);
  t.fx = sx - double(t.x0);
  t.fy = sy - double(t.y0);
  return t;
}

}  // namespace sampdet

// map: [c, h, w]; coords: [p, 2] as (x, y) in feature-grid units.
// Output [p, c]. Coordinates clamp to the edge; the coordinate gradient is
// zero where the clamp is active. Non-finite coordinates are rejected.
template <typename S>
Var<S> bilinear_rows(Graph<S>& g, Var<S> map, Var<S> coords) {
  require(map.shape().nd == 3, "bilinear_rows: map must be [c,h,w]");
  require(coords.p->cols() == 2, "bilinear_rows: coords must be [p,2]");
  const int c = map.shape().d[0], h = map.shape().d[1], w = map.shape().d[2];
  const int p = coords.p->rows();
  Node<S>* nd = g.alloc(Shape(p, c));
  const S* mv = map.data();
  const S* cv = coords.data();
  S* yv = nd->own_vals.data();
  for (int i = 0; i < p; ++i) {
    const double sx = double(cv[2 * i]), sy = double(cv[2 * i + 1]);
    if (!std::isfinite(sx) || !std::isfinite(sy))
      throw NumericError("bilinear_rows: non-finite coordinate");
    const auto t = sampdet::make_tap(sx, sy, h, w);
    const S w00 = S((1 - t.fx) * (1 - t.fy)), w01 = S(t.fx * (1 - t.fy));
    const S w10 = S((1 - t.fx) * t.fy), w11 = S(t.fx * t.fy);
    for (int ci = 0; ci < c; ++ci) {
      const S* plane = mv + std::int64_t(ci) * h * w;
      yv[std::int64_t(i) * c + ci] =
          w00 * plane[std::int64_t(t.y0) * w + t.x0] +
          w01 * plane[std::int64_t(t.y0) * w + t.x1] +
          w10 * plane[std::int64_t(t.y1) * w + t.x0] +
          w11 * plane[std::int64_t(t.y1) * w + t.x1];
    }
  }
  bool need = map.p->needs_grad || coords.p->needs_grad;
  if (g.grad_enabled() && need) {
    nd->needs_grad = true;
    Node<S>*mp = map.p, *cp = coords.p;
    nd->back = [nd, mp, cp, c, h, w, p] {
      const S* dy = nd->grad_buf();
      const S* cv2 = cp->vals;
      const S* mv2 = mp->vals;
      S* dmap = mp->needs_grad ? mp->grad_buf() : nullptr;
      S* dcoords = cp->needs_grad ? cp->grad_buf() : nullptr;
      for (int i = 0; i < p; ++i) {
        const auto t = sampdet::make_tap(double(cv2[2 * i]),
                                         double(cv2[2 * i + 1]), h, w);
        const S w00 = S((1 - t.fx) * (1 - t.fy)), w01 = S(t.fx * (1 - t.fy));
        const S w10 = S((1 - t.fx) * t.fy), w11 = S(t.fx * t.fy);
        S gx = 0, gy = 0;
        for (int ci = 0; ci < c; ++ci) {
          const S d = dy[std::int64_t(i) * c + ci];
          const std::int64_t base = std::int64_t(ci) * h * w;
          const std::int64_t i00 = base + std::int64_t(t.y0) * w + t.x0;
          const std::int64_t i01 = base + std::int64_t(t.y0) * w + t.x1;
          const std::int64_t i10 = base + std::int64_t(t.y1) * w + t.x0;
          const std::int64_t i11 = base + std::int64_t(t.y1) * w + t.x1;
          if (dmap) {
            dmap[i00] += w00 * d;
            dmap[i01] += w01 * d;
            dmap[i10] += w10 * d;
            dmap[i11] += w11 * d;
          }
          if (dcoords) {
            const S v00 = mv2[i00], v01 = mv2[i01], v10 = mv2[i10],
                    v11 = mv2[i11];
            gx += d * S((v01 - v00) * (1 - t.fy) + (v11 - v10) * t.fy);
            gy += d * S((v10 - v00) * (1 - t.fx) + (v11 - v01) * t.fx);
          }
        }
        if (dcoords) {
          if (t.in_x) dcoords[2 * i] += gx;
          if (t.in_y) dcoords[2 * i + 1] += gy;
        }
      }
    };
  }
  return {nd};
}

// ---- correlation crops -----------------------------------------------------

// levels[l] holds one (hl, wl) map per row; dims give (hl, wl). Row r uses
// centers row r/group, scaled by 1/2^l per level. Output columns are level
// major, then dy major, dx minor: col = l*side^2 + (dy+r)*side + (dx+r).
template <typename S>
Var<S> crop_pyramid(Graph<S>& g, const std::vector<Var<S>>& levels,
                    const std::vector<std::pair<int, int>>& dims,
                    Var<S> centers, int group, int radius) {
  const int L = int(levels.size());
  require(L > 0 && dims.size() == std::size_t(L), "crop_pyramid: levels/dims");
  const int rows = levels[0].p->rows();
  require(centers.p->cols() == 2, "crop_pyramid: centers must be [n,2]");
  require(group >= 1 && rows == centers.p->rows() * group,
          "crop_pyramid: rows != centers*group");
  for (int l = 0; l < L; ++l) {
    require(levels[l].p->rows() == rows, "crop_pyramid: level row mismatch");
    require(levels[l].p->cols() == dims[l].first * dims[l].second,
            "crop_pyramid: level map size");
  }
  const int side = 2 * radius + 1;
  const int per_level = side * side;
  Node<S>* nd = g.alloc(Shape(rows, L * per_level));
  const S* cenv = centers.data();
  S* yv = nd->own_vals.data();
  for (int i = 0; i < rows; ++i) {
    const S cx = cenv[2 * (i / group)], cy = cenv[2 * (i / group) + 1];
    if (!std::isfinite(double(cx)) || !std::isfinite(double(cy)))
      throw NumericError("crop_pyramid: non-finite center");
    S* out = yv + std::int64_t(i) * L * per_level;
    for (int l = 0; l < L; ++l) {
      const auto [hl, wl] = dims[l];
      const S* m = levels[l].data() + std::int64_t(i) * hl * wl;
      const double lcx = double(cx) / double(1 << l);
      const double lcy = double(cy) / double(1 << l);
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          const auto t = sampdet::make_tap(lcx + dx, lcy + dy, hl, wl);
          const S w00 = S((1 - t.fx) * (1 - t.fy)), w01 = S(t.fx * (1 - t.fy));
          const S w10 = S((1 - t.fx) * t.fy), w11 = S(t.fx * t.fy);
          out[l * per_level + (dy + radius) * side + (dx + radius)] =
              w00 * m[std::int64_t(t.y0) * wl + t.x0] +
              w01 * m[std::int64_t(t.y0) * wl + t.x1] +
              w10 * m[std::int64_t(t.y1) * wl + t.x0] +
              w11 * m[std::int64_t(t.y1) * wl + t.x1];
        }
      }
    }
  }
  bool need = centers.p->needs_grad;
  for (auto& lv : levels) need = need || lv.p->needs_grad;
  if (g.grad_enabled() && need) {
    nd->needs_grad = true;
    std::vector<Node<S>*> lps;
    for (auto& lv : levels) lps.push_back(lv.p);
    Node<S>* cp = centers.p;
    nd->back = [nd, lps, cp, dims, group, radius, rows, L, side, per_level] {
      const S* dy_all = nd->grad_buf();
      const S* cenv2 = cp->vals;
      S* dcen = cp->needs_grad ? cp->grad_buf() : nullptr;
      for (int i = 0; i < rows; ++i) {
        const S cx = cenv2[2 * (i / group)], cy = cenv2[2 * (i / group) + 1];
        const S* dout = dy_all + std::int64_t(i) * L * per_level;
        for (int l = 0; l < L; ++l) {
          const auto [hl, wl] = dims[l];
          Node<S>* lp = lps[l];
          const S* m = lp->vals + std::int64_t(i) * hl * wl;
          S* dm = lp->needs_grad
                      ? lp->grad_buf() + std::int64_t(i) * hl * wl
                      : nullptr;
          const double inv = 1.0 / double(1 << l);
          const double lcx = double(cx) * inv, lcy = double(cy) * inv;
          for (int ddy = -radius; ddy <= radius; ++ddy) {
            for (int ddx = -radius; ddx <= radius; ++ddx) {
              const S d =
                  dout[l * per_level + (ddy + radius) * side + (ddx + radius)];
              if (d == S(0)) continue;
              const auto t = sampdet::make_tap(lcx + ddx, lcy + ddy, hl, wl);
              const S w00 = S((1 - t.fx) * (1 - t.fy));
              const S w01 = S(t.fx * (1 - t.fy));
              const S w10 = S((1 - t.fx) * t.fy);
              const S w11 = S(t.fx * t.fy);
              if (dm) {
                dm[std::int64_t(t.y0) * wl + t.x0] += w00 * d;
                dm[std::int64_t(t.y0) * wl + t.x1] += w01 * d;
                dm[std::int64_t(t.y1) * wl + t.x0] += w10 * d;
                dm[std::int64_t(t.y1) * wl + t.x1] += w11 * d;
              }
              if (dcen) {
                const S v00 = m[std::int64_t(t.y0) * wl + t.x0];
                const S v01 = m[std::int64_t(t.y0) * wl + t.x1];
                const S v10 = m[std::int64_t(t.y1) * wl + t.x0];
                const S v11 = m[std::int64_t(t.y1) * wl + t.x1];
                if (t.in_x)
                  dcen[2 * (i / group)] +=
                      d * S(inv) *
                      S((v01 - v00) * (1 - t.fy) + (v11 - v10) * t.fy);
                if (t.in_y)
                  dcen[2 * (i / group) + 1] +=
                      d * S(inv) *
                      S((v10 - v00) * (1 - t.fx) + (v11 - v01) * t.fx);
              }
            }
          }
        }
      }
    };
  }
  return {nd};
}

// ---- attention helper ------------------------------------------------------

// out[r, :] = sum_p w[r, p] * v[r*P + p, :]
template <typename S>
Var<S> grouped_weighted_sum(Graph<S>& g, Var<S> w, Var<S> v) {
  const int r = w.p->rows(), P = w.p->cols(), c = v.p->cols();
  require(v.p->rows() == r * P, "grouped_weighted_sum: row mismatch");
  Node<S>* nd = g.alloc(Shape(r, c));
  const S* wv = w.data();
  const S* vv = v.data();
  S* yv = nd->own_vals.data();
  for (int i = 0; i < r; ++i) {
    S* out = yv + std::int64_t(i) * c;
    std::fill(out, out + c, S(0));
    for (int p = 0; p < P; ++p) {
      const S wt = wv[std::int64_t(i) * P + p];
      const S* row = vv + (std::int64_t(i) * P + p) * c;
      for (int j = 0; j < c; ++j) out[j] += wt * row[j];
    }
  }
  if (g.grad_enabled() && (w.p->needs_grad || v.p->needs_grad)) {
    nd->needs_grad = true;
    Node<S>*wp = w.p, *vp = v.p;
    nd->back = [nd, wp, vp, r, P, c] {
      const S* dy = nd->grad_buf();
      const S* wv2 = wp->vals;
      const S* vv2 = vp->vals;
      S* dw = wp->needs_grad ? wp->grad_buf() : nullptr;
      S* dv = vp->needs_grad ? vp->grad_buf() : nullptr;
      for (int i = 0; i < r; ++i) {
        const S* dyr = dy + std::int64_t(i) * c;
        for (int p = 0; p < P; ++p) {
          const std::int64_t vrow = (std::int64_t(i) * P + p) * c;
          if (dw) {
            S s = 0;
            for (int j = 0; j < c; ++j) s += dyr[j] * vv2[vrow + j];
            dw[std::int64_t(i) * P + p] += s;
          }
          if (dv) {
            const S wt = wv2[std::int64_t(i) * P + p];
            for (int j = 0; j < c; ++j) dv[vrow + j] += wt * dyr[j];
          }
        }
      }
    };
  }
  return {nd};
}

// ---- positional encoding ---------------------------------------------------

// [dx, dy] -> [dx, dy, sin(w_i dx), cos(w_i dx), sin(w_i dy), cos(w_i dy)],
// 16 geometric frequencies from pi/32 up to pi. 66 output columns.
inline const std::vector<double>& posenc_freqs() {
  static const std::vector<double> f = [] {
    std::vector<double> v(16);
    for (int i = 0; i < 16; ++i)
      v[i] = (3.14159265358979323846 / 32.0) * std::pow(32.0, double(i) / 15.0);
    return v;
  }();
  return f;
}

inline constexpr int kPosEncDim = 66;

template <typename S>
Var<S> posenc(Graph<S>& g, Var<S> d) {
  require(d.p->cols() == 2, "posenc: input must be [n,2]");
  const int r = d.p->rows();
  const auto& fr = posenc_freqs();
  const int nf = int(fr.size());
  Node<S>* nd = g.alloc(Shape(r, 2 + 4 * nf));
  const S* dv = d.data();
  S* yv = nd->own_vals.data();
  const int cols = 2 + 4 * nf;
  for (int i = 0; i < r; ++i) {
    const double x = double(dv[2 * i]), y = double(dv[2 * i + 1]);
    S* out = yv + std::int64_t(i) * cols;
    out[0] = S(x);
    out[1] = S(y);
    for (int k = 0; k < nf; ++k) {
      out[2 + k] = S(std::sin(fr[k] * x));
      out[2 + nf + k] = S(std::cos(fr[k] * x));
      out[2 + 2 * nf + k] = S(std::sin(fr[k] * y));
      out[2 + 3 * nf + k] = S(std::cos(fr[k] * y));
    }
  }
  if (g.grad_enabled() && d.p->needs_grad) {
    nd->needs_grad = true;
    Node<S>* dp = d.p;
    nd->back = [nd, dp, r, nf, cols] {
      const auto& fr2 = posenc_freqs();
      const S* dy = nd->grad_buf();
      const S* yv2 = nd->vals;
      S* dx = dp->grad_buf();
      for (int i = 0; i < r; ++i) {
        const S* dyr = dy + std::int64_t(i) * cols;
        const S* yr = yv2 + std::int64_t(i) * cols;
        S gx = dyr[0], gy = dyr[1];
        for (int k = 0; k < nf; ++k) {
          const S w = S(fr2[k]);
          gx += dyr[2 + k] * w * yr[2 + nf + k];        // d sin = cos
          gx -= dyr[2 + nf + k] * w * yr[2 + k];        // d cos = -sin
          gy += dyr[2 + 2 * nf + k] * w * yr[2 + 3 * nf + k];
          gy -= dyr[2 + 3 * nf + k] * w * yr[2 + 2 * nf + k];
        }
        dx[2 * i] += gx;
        dx[2 * i + 1] += gy;
      }
    };
  }
  return {nd};
}

// ---- losses ----------------------------------------------------------------

// sum_r w_r * sum_c |x - target|; weights fold in masks and normalization.
template <typename S>
Var<S> weighted_l1(Graph<S>& g, Var<S> x, const std::vector<S>& target,
                   const std::vector<S>& row_w) {
  const int r = x.p->rows(), c = x.p->cols();
  require(std::int64_t(target.size()) == x.n(), "weighted_l1: target size");
  require(int(row_w.size()) == r, "weighted_l1: weight size");
  Node<S>* nd = g.alloc(Shape(1));
  const S* xv = x.data();
  S acc = 0;
  for (int i = 0; i < r; ++i) {
    if (row_w[i] == S(0)) continue;
    S s = 0;
    for (int j = 0; j < c; ++j)
      s += std::abs(xv[std::int64_t(i) * c + j] - target[std::int64_t(i) * c + j]);
    acc += row_w[i] * s;
  }
  nd->own_vals[0] = acc;
  if (g.grad_enabled() && x.p->needs_grad) {
    nd->needs_grad = true;
    Node<S>* xp = x.p;
    nd->back = [nd, xp, target, row_w, r, c] {
      const S seed = nd->grad_buf()[0];
      const S* xv2 = xp->vals;
      S* dx = xp->grad_buf();
      for (int i = 0; i < r; ++i) {
        if (row_w[i] == S(0)) continue;
        const S wr = seed * row_w[i];
        for (int j = 0; j < c; ++j) {
          const S diff = xv2[std::int64_t(i) * c + j] - target[std::int64_t(i) * c + j];
          dx[std::int64_t(i) * c + j] +=
              wr * (diff > S(0) ? S(1) : (diff < S(0) ? S(-1) : S(0)));
        }
      }
    };
  }
  return {nd};
}

// Numerically fused binary cross entropy on logits:
// sum_r w_r * (max(z,0) - z*y + log1p(exp(-|z|)))
template <typename S>
Var<S> bce_logits(Graph<S>& g, Var<S> z, const std::vector<S>& y,
                  const std::vector<S>& row_w) {
  require(z.p->cols() == 1 || z.shape().nd == 1, "bce_logits: vector input");
  const int r = int(z.n());
  require(std::int64_t(y.size()) == z.n() && std::int64_t(row_w.size()) == z.n(),
          "bce_logits: target/weight size");
  Node<S>* nd = g.alloc(Shape(1));
  const S* zv = z.data();
  S acc = 0;
  for (int i = 0; i < r; ++i) {
    if (row_w[i] == S(0)) continue;
    const S zi = zv[i];
    acc += row_w[i] * (std::max(zi, S(0)) - zi * y[i] +
                       S(std::log1p(std::exp(-std::abs(double(zi))))));
  }
  nd->own_vals[0] = acc;
  if (g.grad_enabled() && z.p->needs_grad) {
    nd->needs_grad = true;
    Node<S>* zp = z.p;
    nd->back = [nd, zp, y, row_w, r] {
      const S seed = nd->grad_buf()[0];
      const S* zv2 = zp->vals;
      S* dz = zp->grad_buf();
      for (int i = 0; i < r; ++i) {
        if (row_w[i] == S(0)) continue;
        const S sig = S(1) / (S(1) + std::exp(-zv2[i]));
        dz[i] += seed * row_w[i] * (sig - y[i]);
      }
    };
  }
  return {nd};
}

// c0*x0 + c1*x1 + ... over scalar vars.
template <typename S>
Var<S> wsum(Graph<S>& g, const std::vector<Var<S>>& xs,
            const std::vector<S>& coef) {
  require(xs.size() == coef.size() && !xs.empty(), "wsum: arity");
  Node<S>* nd = g.alloc(Shape(1));
  S acc = 0;
  bool need = false;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    require(xs[i].n() == 1, "wsum: scalar inputs only");
    acc += coef[i] * xs[i].val();
    need = need || xs[i].p->needs_grad;
  }
  nd->own_vals[0] = acc;
  if (g.grad_enabled() && need) {
    nd->needs_grad = true;
    std::vector<Node<S>*> ps;
    for (auto& v : xs) ps.push_back(v.p);
    nd->back = [nd, ps, coef] {
      const S seed = nd->grad_buf()[0];
      for (std::size_t i = 0; i < ps.size(); ++i)
        if (ps[i]->needs_grad) ps[i]->grad_buf()[0] += seed * coef[i];
    };
  }
  return {nd};
}

}  // namespace ptrack
