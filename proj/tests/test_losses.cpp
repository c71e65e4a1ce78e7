#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "ptrack/losses.hpp"
#include "ptrack/rng.hpp"

using namespace ptrack;

TEST_CASE("trajectory loss weighs iterates by gamma^(K-k)") {
  // one point, one frame; iterate 1 off by 2, iterate 2 off by 1:
  // 0.8 * 2 + 1.0 * 1 = 2.6
  std::vector<std::vector<double>> iters = {{2.0, 0.0}, {1.0, 0.0}};
  std::vector<double> gt = {0.0, 0.0};
  CHECK(trajectory_loss_value(iters, gt, {1}, 0.8) ==
        doctest::Approx(2.6).epsilon(1e-12));
}

TEST_CASE("trajectory loss matches the literal formula on random data") {
  Rng rng(5);
  const int k_total = 3, t = 4, q = 2;
  std::vector<std::vector<double>> iters(k_total);
  std::vector<double> gt(std::size_t(t) * q * 2);
  for (auto& v : gt) v = rng.uniform(0.0, 10.0);
  for (auto& it : iters) {
    it.resize(gt.size());
    for (auto& v : it) v = rng.uniform(0.0, 10.0);
  }
  std::vector<unsigned char> mask = {1, 1, 1, 1, 1, 1, 1, 1};
  double expect = 0;
  for (int k = 0; k < k_total; ++k) {
    double e = 0;
    for (std::size_t i = 0; i < gt.size(); i += 2)
      e += std::abs(iters[std::size_t(k)][i] - gt[i]) +
           std::abs(iters[std::size_t(k)][i + 1] - gt[i + 1]);
    expect += std::pow(0.8, k_total - 1 - k) * e / double(t * q);
  }
  CHECK(trajectory_loss_value(iters, gt, mask, 0.8) ==
        doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("graph trajectory loss equals the value form") {
  Rng rng(7);
  const int k_total = 2, t = 3, q = 2;
  std::vector<std::vector<double>> iters(k_total);
  std::vector<double> gt(std::size_t(t) * q * 2);
  for (auto& v : gt) v = rng.uniform(0.0, 8.0);
  for (auto& it : iters) {
    it.resize(gt.size());
    for (auto& v : it) v = rng.uniform(0.0, 8.0);
  }
  std::vector<unsigned char> q_mask = {1, 0};
  // value form masks rows; expand the per-query mask to (t, q) rows
  std::vector<unsigned char> row_mask(std::size_t(t) * q);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < q; ++j) row_mask[std::size_t(i) * q + j] = q_mask[std::size_t(j)];
  const double expect = trajectory_loss_value(iters, gt, row_mask, 0.8);
  Graph<double> g(false);
  std::vector<Var<double>> traj;
  for (auto& it : iters)
    traj.push_back(g.constant(Shape(t * q, 2), it.data()));
  auto loss = trajectory_loss<double>(g, traj, gt, q_mask, t, q, 0.8);
  CHECK(loss.val() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("larger gamma raises the cost of early errors") {
  // early iterate much worse than the late one: the loss must grow with gamma
  std::vector<std::vector<double>> iters = {{5.0, 3.0}, {0.5, 0.2}};
  std::vector<double> gt = {0.0, 0.0};
  double prev = -1;
  for (double gamma : {0.2, 0.4, 0.6, 0.8, 1.0}) {
    const double l = trajectory_loss_value(iters, gt, {1}, gamma);
    CHECK(l > prev);
    prev = l;
  }
}

TEST_CASE("visibility loss at p=0.5 is ln 2") {
  CHECK(visibility_loss_value<double>({0.5}, {1}, {1}) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(visibility_loss_value<double>({0.5}, {0}, {1}) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("visibility loss clamps extreme probabilities") {
  bool clamped = false;
  const double l = visibility_loss_value<double>({0.0}, {1}, {1}, &clamped);
  CHECK(clamped);
  CHECK(l == doctest::Approx(-std::log(1e-6)).epsilon(1e-9));
  CHECK(std::isfinite(l));
}

TEST_CASE("graph visibility loss equals the value form") {
  const int t = 3, q = 2;
  std::vector<double> logits = {0.3, -1.2, 2.0, 0.0, -0.7, 1.5};
  std::vector<unsigned char> labels = {1, 0, 1, 1, 0, 0};
  std::vector<unsigned char> q_mask = {1, 1};
  std::vector<double> probs(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    probs[i] = 1.0 / (1.0 + std::exp(-logits[i]));
  std::vector<unsigned char> row_mask(probs.size(), 1);
  const double expect = visibility_loss_value(probs, labels, row_mask);
  Graph<double> g(false);
  auto z = g.constant(Shape(t * q, 1), logits.data());
  auto loss = visibility_loss<double>(g, z, labels, q_mask, t, q);
  CHECK(loss.val() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("masked queries contribute nothing to either loss") {
  const int t = 2, q = 2;
  Graph<double> g(false);
  std::vector<double> x1 = {1.0, 2.0, 99.0, -99.0, 3.0, 4.0, 50.0, 60.0};
  std::vector<double> gt = {1.5, 2.5, 0.0, 0.0, 3.5, 4.5, 0.0, 0.0};
  auto v1 = g.constant(Shape(t * q, 2), x1.data());
  auto both = trajectory_loss<double>(g, {v1}, gt, {1, 0}, t, q, 0.8);
  // the same selected query alone
  std::vector<double> x1s = {1.0, 2.0, 3.0, 4.0};
  std::vector<double> gts = {1.5, 2.5, 3.5, 4.5};
  auto v1s = g.constant(Shape(t * 1, 2), x1s.data());
  auto solo = trajectory_loss<double>(g, {v1s}, gts, {1}, t, 1, 0.8);
  CHECK(both.val() == doctest::Approx(solo.val()).epsilon(1e-12));

  std::vector<double> z = {0.7, 30.0, -0.2, -40.0};
  std::vector<unsigned char> labels = {1, 0, 0, 1};
  auto zb = g.constant(Shape(t * q, 1), z.data());
  auto lb = visibility_loss<double>(g, zb, labels, {1, 0}, t, q);
  std::vector<double> zs = {0.7, -0.2};
  auto zv = g.constant(Shape(t * 1, 1), zs.data());
  auto ls = visibility_loss<double>(g, zv, {1, 0}, {1}, t, 1);
  CHECK(lb.val() == doctest::Approx(ls.val()).epsilon(1e-12));
}

TEST_CASE("total loss combines the terms with the configured weights") {
  CHECK(total_loss_value(1.5, 0.25, 1.0, 10.0) ==
        doctest::Approx(4.0).epsilon(1e-12));
  Graph<double> g(false);
  const double a = 1.5, b = 0.25;
  auto va = g.constant(Shape(1, 1), &a);
  auto vb = g.constant(Shape(1, 1), &b);
  LossConfig lc;
  auto tot = total_loss(g, va, vb, lc);
  CHECK(tot.val() == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("loss gradients pass finite differences") {
  Rng rng(11);
  const int t = 2, q = 2, k_total = 2;
  std::vector<double> gt(std::size_t(t) * q * 2);
  for (auto& v : gt) v = rng.uniform(0.0, 5.0);
  std::vector<gradcheck::Input> inputs;
  for (int k = 0; k < k_total; ++k) {
    gradcheck::Input in;
    in.shape = Shape(t * q, 2);
    in.vals.resize(gt.size());
    // keep iterates away from the gt kinks so the FD stencil stays one-sided
    for (auto& v : in.vals) v = rng.uniform(6.0, 9.0);
    inputs.push_back(in);
  }
  gradcheck::Input zin;
  zin.shape = Shape(t * q, 1);
  zin.vals.resize(std::size_t(t) * q);
  for (auto& v : zin.vals) v = rng.uniform(-2.0, 2.0);
  inputs.push_back(zin);
  std::vector<unsigned char> labels = {1, 0, 1, 1};
  auto build = [&](Graph<double>& g, const std::vector<Var<double>>& in) {
    std::vector<Var<double>> traj = {in[0], in[1]};
    auto l_tap = trajectory_loss<double>(g, traj, gt, {1, 1}, t, q, 0.8);
    auto l_vis = visibility_loss<double>(g, in[2], labels, {1, 1}, t, q);
    return total_loss(g, l_tap, l_vis, LossConfig{});
  };
  auto res = gradcheck::check(build, inputs);
  CHECK(res.max_rel < 1e-3);
}

TEST_CASE("loss configs are validated") {
  LossConfig bad;
  bad.gamma = 0.0;
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
  bad.gamma = 1.5;
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
  bad.gamma = 0.8;
  bad.w_vis = -1.0;
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
}
