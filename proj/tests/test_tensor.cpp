#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "ptrack/rng.hpp"
#include "ptrack/tensor.hpp"

using namespace ptrack;
using gradcheck::Input;

namespace {

Input rand_input(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Input in;
  in.shape = s;
  in.vals.resize(std::size_t(s.numel()));
  for (auto& v : in.vals) v = rng.uniform(lo, hi);
  return in;
}

// Reduce any output to a scalar with fixed pseudo-random weights so every
// output element contributes to the checked gradient.
Var<double> spread(Graph<double>& g, Var<double> y) {
  std::vector<double> w(std::size_t(y.n()));
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = 0.3 + 0.7 * std::sin(1.7 * double(i) + 0.3);
  std::vector<double> t(std::size_t(y.n()), 0.0);
  auto flat = copy_reshape(g, y, Shape(int(y.n()), 1));
  auto wv = g.constant(Shape(int(y.n()), 1), w.data());
  return rowsum(g, copy_reshape(g, hadamard(g, flat, wv), Shape(1, int(y.n()))));
}

}  // namespace

TEST_CASE("matmul forward matches a naive triple loop") {
  Rng rng(7);
  auto a = rand_input(Shape(3, 4), rng);
  auto b = rand_input(Shape(4, 5), rng);
  Graph<double> g(false);
  auto y = matmul(g, g.view(a.vals.data(), a.shape), g.view(b.vals.data(), b.shape));
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 5; ++j) {
      double s = 0;
      for (int k = 0; k < 4; ++k) s += a.vals[i * 4 + k] * b.vals[k * 5 + j];
      CHECK(y.val(i * 5 + j) == doctest::Approx(s).epsilon(1e-12));
    }
  }
}

TEST_CASE("matmul gradients") {
  Rng rng(11);
  auto r = gradcheck::check(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return spread(g, matmul(g, in[0], in[1]));
      },
      {rand_input(Shape(3, 4), rng), rand_input(Shape(4, 5), rng)});
  CHECK(r.max_rel < 1e-6);
}

TEST_CASE("linear gradients with bias") {
  Rng rng(12);
  auto r = gradcheck::check(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return spread(g, linear(g, in[0], in[1], in[2]));
      },
      {rand_input(Shape(5, 3), rng), rand_input(Shape(3, 4), rng),
       rand_input(Shape(4), rng)});
  CHECK(r.max_rel < 1e-6);
}

TEST_CASE("elementwise op gradients") {
  Rng rng(13);
  auto r1 = gradcheck::check(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return spread(g, add(g, in[0], in[1]));
      },
      {rand_input(Shape(4, 3), rng), rand_input(Shape(4, 3), rng)});
  CHECK(r1.max_rel < 1e-6);
  auto r2 = gradcheck::check(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return spread(g, sub(g, in[0], in[1]));
      },
      {rand_input(Shape(4, 3), rng), rand_input(Shape(4, 3), rng)});
  CHECK(r2.max_rel < 1e-6);
  auto r3 = gradcheck::check(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return spread(g, hadamard(g, in[0], in[1]));
      },
      {rand_input(Shape(4, 3), rng), rand_input(Shape(4, 3), rng)});
  CHECK(r3.max_rel < 1e-6);
  auto r4 = gradcheck::check(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return spread(g, scale(g, in[0], 2.75));
      },
      {rand_input(Shape(4, 3), rng)});
  CHECK(r4.max_rel < 1e-6);
}

TEST_CASE("activation gradients away from kinks") {
  Rng rng(14);
  Input x = rand_input(Shape(6, 5), rng);
  for (auto& v : x.vals)
    if (std::abs(v) < 0.05) v = 0.1;  // keep relu differentiable at the probe
  auto r1 = gradcheck::check(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return spread(g, relu(g, in[0]));
      },
      {x});
  CHECK(r1.max_rel < 1e-6);
  auto r2 = gradcheck::check(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return spread(g, gelu(g, in[0]));
      },
      {rand_input(Shape(6, 5), rng, -2.0, 2.0)});
  CHECK(r2.max_rel < 1e-6);
  auto r3 = gradcheck::check(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return spread(g, sigmoid(g, in[0]));
      },
      {rand_input(Shape(6, 5), rng, -3.0, 3.0)});
  CHECK(r3.max_rel < 1e-6);
}

TEST_CASE("normalization gradients") {
  Rng rng(15);
  auto r1 = gradcheck::check(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return spread(g, layer_norm(g, in[0], in[1], in[2]));
      },
      {rand_input(Shape(4, 6), rng), rand_input(Shape(6), rng, 0.5, 1.5),
       rand_input(Shape(6), rng)});
  CHECK(r1.max_rel < 1e-5);
  auto r2 = gradcheck::check(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return spread(g, row_norm(g, in[0], in[1], in[2]));
      },
      {rand_input(Shape(4, 6), rng), rand_input(Shape(4), rng, 0.5, 1.5),
       rand_input(Shape(4), rng)});
  CHECK(r2.max_rel < 1e-5);
}

TEST_CASE("layer_norm normalizes rows") {
  Rng rng(16);
  auto x = rand_input(Shape(3, 8), rng, -4.0, 4.0);
  Graph<double> g(false);
  std::vector<double> ones(8, 1.0), zeros(8, 0.0);
  auto y = layer_norm(g, g.view(x.vals.data(), x.shape),
                      g.constant(Shape(8), ones.data()),
                      g.constant(Shape(8), zeros.data()));
  for (int i = 0; i < 3; ++i) {
    double mu = 0, var = 0;
    for (int j = 0; j < 8; ++j) mu += y.val(i * 8 + j);
    mu /= 8;
    for (int j = 0; j < 8; ++j) var += (y.val(i * 8 + j) - mu) * (y.val(i * 8 + j) - mu);
    CHECK(std::abs(mu) < 1e-9);
    CHECK(var / 8 == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("softmax rows sum to one and gradcheck passes") {
  Rng rng(17);
  auto x = rand_input(Shape(5, 7), rng, -2.0, 2.0);
  Graph<double> g(false);
  auto y = softmax_rows(g, g.view(x.vals.data(), x.shape));
  for (int i = 0; i < 5; ++i) {
    double s = 0;
    for (int j = 0; j < 7; ++j) {
      s += y.val(i * 7 + j);
      CHECK(y.val(i * 7 + j) > 0.0);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  auto r = gradcheck::check(
      [](Graph<double>& g2, const std::vector<Var<double>>& in) {
        return spread(g2, softmax_rows(g2, in[0]));
      },
      {x});
  CHECK(r.max_rel < 1e-6);
}

TEST_CASE("conv2d matches direct convolution and gradcheck passes") {
  Rng rng(18);
  const int cin = 2, h = 5, w = 6, cout = 3, k = 3, stride = 2, pad = 1;
  auto x = rand_input(Shape(cin, h, w), rng);
  auto wt = rand_input(Shape(cout, cin * k * k), rng);
  auto b = rand_input(Shape(cout), rng);
  Graph<double> g(false);
  auto y = conv2d(g, g.view(x.vals.data(), x.shape),
                  g.view(wt.vals.data(), wt.shape), g.view(b.vals.data(), b.shape),
                  k, k, stride, pad);
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  REQUIRE(y.shape() == Shape(cout, oh, ow));
  for (int co = 0; co < cout; ++co) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double s = b.vals[co];
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * stride - pad + ky;
              const int ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              s += x.vals[(ci * h + iy) * w + ix] *
                   wt.vals[co * cin * k * k + (ci * k + ky) * k + kx];
            }
        CHECK(y.val((co * oh + oy) * ow + ox) == doctest::Approx(s).epsilon(1e-10));
      }
    }
  }
  auto r = gradcheck::check(
      [&](Graph<double>& g2, const std::vector<Var<double>>& in) {
        return spread(g2, conv2d(g2, in[0], in[1], in[2], k, k, stride, pad));
      },
      {x, wt, b});
  CHECK(r.max_rel < 1e-6);
}

TEST_CASE("avgpool_rows ceil shapes and partial-window averages") {
  // 3x5 map: output 2x3; corner block at (1,2) covers a single element.
  std::vector<double> m(15);
  for (int i = 0; i < 15; ++i) m[i] = double(i);
  Graph<double> g(false);
  auto y = avgpool_rows(g, g.view(m.data(), Shape(1, 15)), 3, 5);
  REQUIRE(y.shape() == Shape(1, 6));
  CHECK(y.val(0) == doctest::Approx((0.0 + 1 + 5 + 6) / 4));
  CHECK(y.val(2) == doctest::Approx((4.0 + 9) / 2));      // right edge: 2 elems
  CHECK(y.val(3) == doctest::Approx((10.0 + 11) / 2));    // bottom edge
  CHECK(y.val(5) == doctest::Approx(14.0));               // corner: 1 elem
  Rng rng(19);
  auto r = gradcheck::check(
      [](Graph<double>& g2, const std::vector<Var<double>>& in) {
        return spread(g2, avgpool_rows(g2, in[0], 3, 5));
      },
      {rand_input(Shape(2, 15), rng)});
  CHECK(r.max_rel < 1e-6);
}

TEST_CASE("bilinear_rows interpolates and clamps") {
  // 1-channel 2x3 map with known values.
  std::vector<double> m = {1, 2, 3, 4, 5, 6};
  Graph<double> g(false);
  std::vector<double> coords = {
      0.5, 0.5,    // center of the first cell: mean of 1,2,4,5
      2.0, 1.0,    // exact grid point
      -5.0, -5.0,  // clamps to (0,0)
      9.0, 9.0,    // clamps to (2,1)
  };
  auto y = bilinear_rows(g, g.view(m.data(), Shape(1, 2, 3)),
                         g.view(coords.data(), Shape(4, 2)));
  CHECK(y.val(0) == doctest::Approx(3.0));
  CHECK(y.val(1) == doctest::Approx(6.0));
  CHECK(y.val(2) == doctest::Approx(1.0));
  CHECK(y.val(3) == doctest::Approx(6.0));
}

TEST_CASE("bilinear_rows gradients for map and interior coords") {
  Rng rng(20);
  auto m = rand_input(Shape(3, 4, 5), rng);
  Input coords;
  coords.shape = Shape(6, 2);
  for (int i = 0; i < 6; ++i) {
    coords.vals.push_back(rng.uniform(0.3, 3.4));  // x in (0, w-1), off-lattice
    coords.vals.push_back(rng.uniform(0.3, 2.6));
  }
  auto r = gradcheck::check(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return spread(g, bilinear_rows(g, in[0], in[1]));
      },
      {m, coords});
  CHECK(r.max_rel < 1e-5);
}

TEST_CASE("bilinear_rows rejects non-finite coordinates") {
  std::vector<double> m = {1, 2, 3, 4};
  std::vector<double> coords = {std::nan(""), 0.0};
  Graph<double> g(false);
  CHECK_THROWS_AS(bilinear_rows(g, g.view(m.data(), Shape(1, 2, 2)),
                                g.view(coords.data(), Shape(1, 2))),
                  NumericError);
}

TEST_CASE("crop_pyramid layout is level major then dy major") {
  // Two levels with recognizable values; center on a lattice point so the
  // bilinear taps are exact.
  const int h0 = 8, w0 = 8;
  std::vector<double> lv0(h0 * w0), lv1(16);
  for (int i = 0; i < h0 * w0; ++i) lv0[i] = double(i);
  for (int i = 0; i < 16; ++i) lv1[i] = 100.0 + double(i);
  Graph<double> g(false);
  std::vector<double> center = {4.0, 4.0};
  auto out = crop_pyramid<double>(
      g, {g.view(lv0.data(), Shape(1, h0 * w0)), g.view(lv1.data(), Shape(1, 16))},
      {{h0, w0}, {4, 4}}, g.view(center.data(), Shape(1, 2)), 1, 1);
  REQUIRE(out.shape() == Shape(1, 2 * 9));
  // level 0, dy=-1..1, dx=-1..1 around (4,4)
  CHECK(out.val(0) == doctest::Approx(lv0[3 * 8 + 3]));
  CHECK(out.val(4) == doctest::Approx(lv0[4 * 8 + 4]));
  CHECK(out.val(8) == doctest::Approx(lv0[5 * 8 + 5]));
  // level 1 centered at (2,2)
  CHECK(out.val(9) == doctest::Approx(lv1[1 * 4 + 1]));
  CHECK(out.val(13) == doctest::Approx(lv1[2 * 4 + 2]));
}

TEST_CASE("crop_pyramid gradients flow to levels and centers") {
  Rng rng(21);
  auto lv0 = rand_input(Shape(2, 48), rng);  // two rows of 6x8 maps
  auto lv1 = rand_input(Shape(2, 12), rng);  // 3x4
  Input center;
  center.shape = Shape(2, 2);
  center.vals = {2.3, 2.2, 4.1, 3.3};
  auto r = gradcheck::check(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return spread(g, crop_pyramid<double>(g, {in[0], in[1]},
                                              {{6, 8}, {3, 4}}, in[2], 1, 1));
      },
      {lv0, lv1, center});
  CHECK(r.max_rel < 1e-5);
}

TEST_CASE("crop_pyramid groups rows onto shared centers") {
  Rng rng(22);
  auto lv = rand_input(Shape(4, 30), rng);  // rows (c0,g0),(c0,g1),(c1,g0),(c1,g1)
  Input center;
  center.shape = Shape(2, 2);
  center.vals = {2.0, 2.0, 3.0, 1.0};
  Graph<double> g(false);
  auto out = crop_pyramid<double>(g, {g.view(lv.vals.data(), lv.shape)}, {{5, 6}},
                                  g.view(center.vals.data(), center.shape), 2, 1);
  REQUIRE(out.shape() == Shape(4, 9));
  // row 1 uses center 0, row 2 uses center 1
  Graph<double> g2(false);
  auto single = crop_pyramid<double>(
      g2, {g2.view(lv.vals.data() + 2 * 30, Shape(1, 30))}, {{5, 6}},
      g2.constant(Shape(1, 2), {3.0, 1.0}), 1, 1);
  for (int j = 0; j < 9; ++j) CHECK(out.val(2 * 9 + j) == doctest::Approx(single.val(j)));
}

TEST_CASE("data movement gradients") {
  Rng rng(23);
  auto r1 = gradcheck::check(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return spread(g, tile_rows(g, in[0], 3));
      },
      {rand_input(Shape(2, 4), rng)});
  CHECK(r1.max_rel < 1e-6);
  auto r2 = gradcheck::check(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return spread(g, rows_block(g, in[0], 1, 2));
      },
      {rand_input(Shape(4, 3), rng)});
  CHECK(r2.max_rel < 1e-6);
  auto r3 = gradcheck::check(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return spread(g, concat_cols(g, {in[0], in[1]}));
      },
      {rand_input(Shape(3, 2), rng), rand_input(Shape(3, 5), rng)});
  CHECK(r3.max_rel < 1e-6);
  auto r4 = gradcheck::check(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return spread(g, concat_rows(g, {in[0], in[1]}));
      },
      {rand_input(Shape(2, 4), rng), rand_input(Shape(3, 4), rng)});
  CHECK(r4.max_rel < 1e-6);
  auto r5 = gradcheck::check(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return spread(g, expand_rows(g, in[0], 3, {1, 2, 3, 4, 5, 6}, 0.5));
      },
      {rand_input(Shape(4, 2), rng)});
  CHECK(r5.max_rel < 1e-6);
  auto r6 = gradcheck::check(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return spread(g, rowsum(g, in[0]));
      },
      {rand_input(Shape(3, 6), rng)});
  CHECK(r6.max_rel < 1e-6);
}

TEST_CASE("grouped_weighted_sum matches manual expansion and gradchecks") {
  Rng rng(24);
  auto w = rand_input(Shape(3, 4), rng);
  auto v = rand_input(Shape(12, 5), rng);
  Graph<double> g(false);
  auto y = grouped_weighted_sum(g, g.view(w.vals.data(), w.shape),
                                g.view(v.vals.data(), v.shape));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) {
      double s = 0;
      for (int p = 0; p < 4; ++p) s += w.vals[i * 4 + p] * v.vals[(i * 4 + p) * 5 + j];
      CHECK(y.val(i * 5 + j) == doctest::Approx(s).epsilon(1e-12));
    }
  auto r = gradcheck::check(
      [](Graph<double>& g2, const std::vector<Var<double>>& in) {
        return spread(g2, grouped_weighted_sum(g2, in[0], in[1]));
      },
      {w, v});
  CHECK(r.max_rel < 1e-6);
}

TEST_CASE("posenc layout and gradients") {
  Graph<double> g(false);
  auto y = posenc(g, g.constant(Shape(1, 2), {0.0, 0.0}));
  REQUIRE(y.shape() == Shape(1, kPosEncDim));
  CHECK(y.val(0) == 0.0);
  for (int k = 0; k < 16; ++k) {
    CHECK(y.val(2 + k) == 0.0);                       // sin block x
    CHECK(y.val(2 + 16 + k) == doctest::Approx(1.0)); // cos block x
  }
  const auto& fr = posenc_freqs();
  CHECK(fr.front() == doctest::Approx(3.14159265358979 / 32.0));
  CHECK(fr.back() == doctest::Approx(3.14159265358979));
  Rng rng(25);
  auto r = gradcheck::check(
      [](Graph<double>& g2, const std::vector<Var<double>>& in) {
        return spread(g2, posenc(g2, in[0]));
      },
      {rand_input(Shape(5, 2), rng, -3.0, 3.0)});
  CHECK(r.max_rel < 1e-5);
}

TEST_CASE("loss op gradients") {
  Rng rng(26);
  Input x = rand_input(Shape(6, 2), rng);
  std::vector<double> target(12);
  for (auto& t : target) t = rng.uniform(-1, 1);
  for (int i = 0; i < 12; ++i)
    if (std::abs(x.vals[i] - target[i]) < 0.05) x.vals[i] += 0.1;  // off the kink
  std::vector<double> wr = {0.5, 0.0, 0.25, 0.25, 0.1, 0.4};
  auto r1 = gradcheck::check(
      [&](Graph<double>& g, const std::vector<Var<double>>& in) {
        return weighted_l1(g, in[0], target, wr);
      },
      {x});
  CHECK(r1.max_rel < 1e-6);

  Input z = rand_input(Shape(5, 1), rng, -2.5, 2.5);
  std::vector<double> yv = {1, 0, 1, 1, 0}, wv = {0.2, 0.2, 0.0, 0.3, 0.3};
  auto r2 = gradcheck::check(
      [&](Graph<double>& g, const std::vector<Var<double>>& in) {
        return bce_logits(g, in[0], yv, wv);
      },
      {z});
  CHECK(r2.max_rel < 1e-6);

  auto r3 = gradcheck::check(
      [&](Graph<double>& g, const std::vector<Var<double>>& in) {
        return wsum<double>(g, {weighted_l1(g, in[0], target, wr),
                                rowsum(g, copy_reshape(g, in[0], Shape(1, 12)))},
                            {1.0, 10.0});
      },
      {x});
  CHECK(r3.max_rel < 1e-6);
}

TEST_CASE("bce_logits is finite for extreme logits") {
  Graph<double> g(false);
  std::vector<double> y = {1, 0}, w = {0.5, 0.5};
  auto loss = bce_logits(g, g.constant(Shape(2, 1), {80.0, -80.0}), y, w);
  CHECK(std::isfinite(loss.val()));
  CHECK(loss.val() < 1e-6);  // confident and correct
  auto bad = bce_logits(g, g.constant(Shape(2, 1), {-80.0, 80.0}), y, w);
  CHECK(std::isfinite(bad.val()));
  CHECK(bad.val() > 10.0);
}

TEST_CASE("stop_grad blocks the tape") {
  std::vector<double> xv = {1.0, 2.0};
  Graph<double> g(true);
  auto x = g.leaf(xv.data(), Shape(2, 1));
  auto y = rowsum(g, copy_reshape(g, stop_grad(g, x), Shape(1, 2)));
  g.backward(y);
  CHECK(x.p->grad_buf()[0] == 0.0);
  CHECK(x.p->grad_buf()[1] == 0.0);
}

TEST_CASE("node reuse accumulates gradients from every consumer") {
  std::vector<double> xv = {3.0};
  Graph<double> g(true);
  auto x = g.leaf(xv.data(), Shape(1));
  auto y = add(g, x, x);  // dy/dx = 2
  g.backward(y);
  CHECK(x.p->grad_buf()[0] == doctest::Approx(2.0));
}

TEST_CASE("backward on shape-violating ops throws invalid_argument") {
  Graph<double> g(false);
  std::vector<double> a = {1, 2, 3, 4, 5, 6};
  CHECK_THROWS_AS(matmul(g, g.view(a.data(), Shape(2, 3)),
                         g.view(a.data(), Shape(2, 3))),
                  std::invalid_argument);
}
