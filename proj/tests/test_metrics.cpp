#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "ptrack/metrics.hpp"
#include "ptrack/rng.hpp"

using namespace ptrack;

namespace {

EvalRecord random_record(int n, int t, std::uint64_t seed,
                         double err_scale = 6.0) {
  EvalRecord r;
  r.n_queries = n;
  r.n_frames = t;
  const std::size_t pairs = std::size_t(n) * t;
  r.pred.resize(pairs * 2);
  r.gt.resize(pairs * 2);
  r.pred_vis.resize(pairs);
  r.gt_vis.resize(pairs);
  Rng rng(seed);
  for (std::size_t i = 0; i < pairs; ++i) {
    r.gt[2 * i] = rng.uniform(0.0, 100.0);
    r.gt[2 * i + 1] = rng.uniform(0.0, 100.0);
    r.pred[2 * i] = r.gt[2 * i] + rng.uniform(-err_scale, err_scale);
    r.pred[2 * i + 1] = r.gt[2 * i + 1] + rng.uniform(-err_scale, err_scale);
    r.gt_vis[i] = rng.uniform() < 0.7 ? 1 : 0;
    r.pred_vis[i] = rng.uniform() < 0.7 ? 1 : 0;
  }
  return r;
}

double err_at(const EvalRecord& r, std::size_t i) {
  return std::hypot(r.pred[2 * i] - r.gt[2 * i],
                    r.pred[2 * i + 1] - r.gt[2 * i + 1]);
}

}  // namespace

TEST_CASE("perfect predictions score perfectly") {
  EvalRecord r = random_record(3, 4, 1);
  r.pred = r.gt;
  r.pred_vis = r.gt_vis;
  // ensure both splits are populated
  r.gt_vis[0] = 1;
  r.gt_vis[1] = 0;
  r.pred_vis = r.gt_vis;
  auto a = ate(r);
  CHECK(*a.vis == 0.0);
  CHECK(*a.occ == 0.0);
  CHECK(*a_pck(r).average == 1.0);
  CHECK(average_jaccard(r)->average == 1.0);
  CHECK(occlusion_accuracy(r) == 1.0);
}

TEST_CASE("two visible frames with errors 3 and 4 average to 3.5") {
  EvalRecord r;
  r.n_queries = 1;
  r.n_frames = 2;
  r.gt = {0, 0, 10, 0};
  r.pred = {3, 0, 10, 4};
  r.gt_vis = {1, 1};
  r.pred_vis = {1, 1};
  auto a = ate(r);
  CHECK(*a.vis == doctest::Approx(3.5).epsilon(1e-12));
  CHECK_FALSE(a.occ.has_value());
}

TEST_CASE("a 3px error lands in thresholds 4, 8 and 16 only") {
  EvalRecord r;
  r.n_queries = 1;
  r.n_frames = 1;
  r.gt = {50, 50};
  r.pred = {53, 50};
  r.gt_vis = {1};
  r.pred_vis = {1};
  auto p = a_pck(r);
  REQUIRE(p.per_threshold.size() == 5);
  CHECK(p.per_threshold[0] == 0.0);
  CHECK(p.per_threshold[1] == 0.0);
  CHECK(p.per_threshold[2] == 1.0);
  CHECK(p.per_threshold[3] == 1.0);
  CHECK(p.per_threshold[4] == 1.0);
  CHECK(*p.average == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("threshold comparison is strict") {
  EvalRecord r;
  r.n_queries = 1;
  r.n_frames = 1;
  r.gt = {0, 0};
  r.pred = {4, 0};  // exactly 4 px: not < 4
  r.gt_vis = {1};
  r.pred_vis = {1};
  auto p = a_pck(r);
  CHECK(p.per_threshold[2] == 0.0);
  CHECK(p.per_threshold[3] == 1.0);
}

TEST_CASE("random record matches the brute-force oracles") {
  EvalRecord r = random_record(5, 8, 42);
  const std::size_t pairs = 40;

  double sv = 0, so = 0;
  std::int64_t nv = 0, no = 0;
  for (std::size_t i = 0; i < pairs; ++i) {
    if (r.gt_vis[i]) {
      sv += err_at(r, i);
      ++nv;
    } else {
      so += err_at(r, i);
      ++no;
    }
  }
  auto a = ate(r);
  REQUIRE(nv > 0);
  REQUIRE(no > 0);
  CHECK(*a.vis == doctest::Approx(sv / double(nv)).epsilon(1e-9));
  CHECK(*a.occ == doctest::Approx(so / double(no)).epsilon(1e-9));

  auto p = a_pck(r);
  for (std::size_t k = 0; k < kPckThresholds.size(); ++k) {
    std::int64_t hit = 0;
    for (std::size_t i = 0; i < pairs; ++i)
      if (r.gt_vis[i] && err_at(r, i) < kPckThresholds[k]) ++hit;
    CHECK(p.per_threshold[k] == double(hit) / double(nv));
  }

  auto j = average_jaccard(r);
  REQUIRE(j.has_value());
  for (std::size_t k = 0; k < kPckThresholds.size(); ++k) {
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pairs; ++i) {
      const bool gv = r.gt_vis[i], pv = r.pred_vis[i];
      const bool close = err_at(r, i) < kPckThresholds[k];
      tp += gv && pv && close;
      fp += pv && (!gv || !close);
      fn += gv && (!pv || !close);
    }
    CHECK(j->per_threshold[k] == double(tp) / double(tp + fp + fn));
  }

  std::int64_t agree = 0;
  for (std::size_t i = 0; i < pairs; ++i)
    agree += (r.pred_vis[i] != 0) == (r.gt_vis[i] != 0);
  CHECK(occlusion_accuracy(r) == double(agree) / double(pairs));
}

TEST_CASE("empty splits are undefined rather than zero") {
  EvalRecord r = random_record(2, 3, 7);
  std::fill(r.gt_vis.begin(), r.gt_vis.end(), 1);
  auto a = ate(r);
  CHECK(a.vis.has_value());
  CHECK_FALSE(a.occ.has_value());

  std::fill(r.gt_vis.begin(), r.gt_vis.end(), 0);
  auto p = a_pck(r);
  CHECK_FALSE(p.average.has_value());
  CHECK(p.per_threshold.empty());

  std::fill(r.pred_vis.begin(), r.pred_vis.end(), 0);
  CHECK_FALSE(average_jaccard(r).has_value());
}

TEST_CASE("all-occluded predictions give zero Jaccard everywhere") {
  EvalRecord r = random_record(3, 4, 9);
  std::fill(r.pred_vis.begin(), r.pred_vis.end(), 0);
  r.gt_vis[2] = 1;  // at least one gt-visible pair
  auto j = average_jaccard(r);
  REQUIRE(j.has_value());
  for (double v : j->per_threshold) CHECK(v == 0.0);
  CHECK(j->average == 0.0);
}

TEST_CASE("with perfect visibility flags AJ cannot exceed A-PCK") {
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    EvalRecord r = random_record(4, 6, seed);
    r.pred_vis = r.gt_vis;
    bool any = false;
    for (auto v : r.gt_vis) any = any || v;
    if (!any) continue;
    auto p = a_pck(r);
    auto j = average_jaccard(r);
    REQUIRE(p.average.has_value());
    REQUIRE(j.has_value());
    CHECK(j->average <= *p.average + 1e-12);
  }
}

TEST_CASE("metrics are invariant to query permutation") {
  EvalRecord r = random_record(6, 5, 33);
  EvalRecord s = r;
  std::vector<int> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  std::rotate(perm.begin(), perm.begin() + 2, perm.end());
  for (int n = 0; n < 6; ++n)
    for (int t = 0; t < 5; ++t) {
      const std::size_t src = std::size_t(perm[std::size_t(n)]) * 5 + t;
      const std::size_t dst = std::size_t(n) * 5 + t;
      s.pred[2 * dst] = r.pred[2 * src];
      s.pred[2 * dst + 1] = r.pred[2 * src + 1];
      s.gt[2 * dst] = r.gt[2 * src];
      s.gt[2 * dst + 1] = r.gt[2 * src + 1];
      s.pred_vis[dst] = r.pred_vis[src];
      s.gt_vis[dst] = r.gt_vis[src];
    }
  CHECK(*ate(r).vis == doctest::Approx(*ate(s).vis).epsilon(1e-12));
  CHECK(*a_pck(r).average == *a_pck(s).average);
  CHECK(average_jaccard(r)->average ==
        doctest::Approx(average_jaccard(s)->average).epsilon(1e-12));
  CHECK(occlusion_accuracy(r) == occlusion_accuracy(s));
}

TEST_CASE("doubling coordinates doubles ATE and scaled thresholds agree") {
  EvalRecord r = random_record(4, 4, 55);
  EvalRecord d = r;
  for (auto& v : d.pred) v *= 2.0;
  for (auto& v : d.gt) v *= 2.0;
  CHECK(*ate(d).vis == doctest::Approx(2.0 * *ate(r).vis).epsilon(1e-12));
  std::vector<double> scaled;
  for (double t : kPckThresholds) scaled.push_back(2.0 * t);
  auto p1 = a_pck(r), p2 = a_pck(d, scaled);
  CHECK(p1.per_threshold == p2.per_threshold);
}

TEST_CASE("first sampling takes the earliest visible frame per track") {
  // track 0 visible from frame 0; track 1 from frame 2; track 2 never
  std::vector<unsigned char> vis = {1, 1, 1, 1,  0, 0, 1, 1,  0, 0, 0, 0};
  auto s = sample_queries(vis, 3, 4, SampleStrategy::kFirst);
  REQUIRE(s.queries.size() == 2);
  CHECK(s.queries[0].track == 0);
  CHECK(s.queries[0].frame == 0);
  CHECK(s.queries[1].track == 1);
  CHECK(s.queries[1].frame == 2);
  REQUIRE(s.skipped_tracks.size() == 1);
  CHECK(s.skipped_tracks[0] == 2);
}

TEST_CASE("strided sampling visits every 5th visible frame") {
  std::vector<unsigned char> vis(16, 1);
  auto s = sample_queries(vis, 1, 16, SampleStrategy::kStrided);
  REQUIRE(s.queries.size() == 4);
  CHECK(s.queries[0].frame == 0);
  CHECK(s.queries[1].frame == 5);
  CHECK(s.queries[2].frame == 10);
  CHECK(s.queries[3].frame == 15);
}

TEST_CASE("sampling matches an enumeration oracle on random masks") {
  Rng rng(77);
  const int n = 8, t = 17;
  std::vector<unsigned char> vis(std::size_t(n) * t);
  for (auto& v : vis) v = rng.uniform() < 0.5 ? 1 : 0;
  for (auto strategy : {SampleStrategy::kFirst, SampleStrategy::kStrided}) {
    auto s = sample_queries(vis, n, t, strategy);
    std::vector<QuerySpec> expect;
    std::vector<int> skipped;
    for (int i = 0; i < n; ++i) {
      bool any = false;
      for (int f = 0; f < t; ++f) {
        if (!vis[std::size_t(i) * t + f]) continue;
        if (strategy == SampleStrategy::kFirst) {
          if (!any) expect.push_back({i, f});
          any = true;
        } else if (f % 5 == 0) {
          expect.push_back({i, f});
          any = true;
        }
      }
      if (!any) skipped.push_back(i);
    }
    REQUIRE(s.queries.size() == expect.size());
    for (std::size_t k = 0; k < expect.size(); ++k) {
      CHECK(s.queries[k].track == expect[k].track);
      CHECK(s.queries[k].frame == expect[k].frame);
    }
    CHECK(s.skipped_tracks == skipped);
  }
}

TEST_CASE("strategy names parse and bad ones raise config errors") {
  CHECK(parse_strategy("first") == SampleStrategy::kFirst);
  CHECK(parse_strategy("strided") == SampleStrategy::kStrided);
  CHECK_THROWS_AS(parse_strategy("middle"), ConfigError);
}

TEST_CASE("metrics JSON uses null for undefined values") {
  EvalRecord r = random_record(2, 3, 5);
  std::fill(r.gt_vis.begin(), r.gt_vis.end(), 1);
  auto j = metrics_json(compute_metrics(r));
  CHECK(j["ate_vis"].is_number());
  CHECK(j["ate_occ"].is_null());
  CHECK(j["a_pck"].is_number());
  CHECK(j["pck"]["4"].is_number());
  CHECK(j["occlusion_accuracy"].is_number());
}

TEST_CASE("mismatched record shapes are rejected") {
  EvalRecord r = random_record(2, 3, 5);
  r.pred_vis.pop_back();
  CHECK_THROWS_AS(ate(r), std::invalid_argument);
}

TEST_CASE("scoring mask hides pairs from every metric") {
  // Frame 0 carries a huge miss with disagreeing flags; masked out, the
  // remaining frames are perfect, so every metric must come out perfect.
  EvalRecord r;
  r.n_queries = 1;
  r.n_frames = 4;
  r.gt = {5, 5, 10, 10, 20, 20, 30, 30};
  r.pred = {105, 205, 10, 10, 20, 20, 30, 30};
  r.gt_vis = {1, 1, 1, 1};
  r.pred_vis = {0, 1, 1, 1};
  r.counted = {0, 1, 1, 1};
  auto m = compute_metrics(r);
  REQUIRE(m.ate.vis.has_value());
  CHECK(*m.ate.vis == 0.0);
  CHECK(!m.ate.occ.has_value());
  CHECK(*m.pck.average == 1.0);
  REQUIRE(m.jaccard.has_value());
  CHECK(m.jaccard->average == 1.0);
  CHECK(m.occ_acc == 1.0);
}

TEST_CASE("masked entries may hold arbitrary values") {
  EvalRecord a = random_record(4, 6, 91);
  a.counted.assign(a.gt_vis.size(), 1);
  Rng rng(92);
  for (auto& c : a.counted) c = rng.uniform() < 0.5 ? 1 : 0;
  a.counted[0] = 1;  // keep at least one scored pair
  EvalRecord b = a;
  for (std::size_t i = 0; i < a.counted.size(); ++i) {
    if (a.counted[i]) continue;
    b.pred[2 * i] = 1e9;
    b.pred[2 * i + 1] = -1e9;
    b.pred_vis[i] = !a.pred_vis[i];
    b.gt_vis[i] = !a.gt_vis[i];
  }
  auto ma = compute_metrics(a), mb = compute_metrics(b);
  CHECK(ma.ate.vis == mb.ate.vis);
  CHECK(ma.ate.occ == mb.ate.occ);
  CHECK(ma.pck.average == mb.pck.average);
  CHECK(ma.jaccard.has_value() == mb.jaccard.has_value());
  if (ma.jaccard)
    CHECK(ma.jaccard->average == mb.jaccard->average);
  CHECK(ma.occ_acc == mb.occ_acc);
}

TEST_CASE("all-ones mask matches no mask and empty mask is rejected") {
  EvalRecord a = random_record(3, 5, 17);
  EvalRecord b = a;
  b.counted.assign(b.gt_vis.size(), 1);
  auto ja = metrics_json(compute_metrics(a));
  auto jb = metrics_json(compute_metrics(b));
  CHECK(ja.dump() == jb.dump());
  EvalRecord c = a;
  c.counted.assign(c.gt_vis.size(), 0);
  CHECK_THROWS_AS(compute_metrics(c), std::invalid_argument);
}
