#include "ptrack/metrics.hpp"

#include <cmath>

namespace ptrack {

void validate(const EvalRecord& rec) {
  const std::size_t pairs = std::size_t(rec.n_queries) * rec.n_frames;
  require(rec.n_queries >= 1 && rec.n_frames >= 1,
          "metrics: record must hold at least one query and frame");
  require(rec.pred.size() == pairs * 2 && rec.gt.size() == pairs * 2,
          "metrics: coordinate arrays must be [n*t*2]");
  require(rec.pred_vis.size() == pairs && rec.gt_vis.size() == pairs,
          "metrics: visibility arrays must be [n*t]");
  if (!rec.counted.empty()) {
    require(rec.counted.size() == pairs, "metrics: scoring mask must be [n*t]");
    bool any = false;
    for (unsigned char c : rec.counted) any = any || c != 0;
    require(any, "metrics: scoring mask excludes every pair");
  }
}

namespace {

double pair_error(const EvalRecord& rec, std::size_t i) {
  const double dx = rec.pred[2 * i] - rec.gt[2 * i];
  const double dy = rec.pred[2 * i + 1] - rec.gt[2 * i + 1];
  return std::sqrt(dx * dx + dy * dy);
}

bool scored(const EvalRecord& rec, std::size_t i) {
  return rec.counted.empty() || rec.counted[i] != 0;
}

}  // namespace

AteResult ate(const EvalRecord& rec) {
  validate(rec);
  double sum_vis = 0, sum_occ = 0;
  std::int64_t n_vis = 0, n_occ = 0;
  const std::size_t pairs = std::size_t(rec.n_queries) * rec.n_frames;
  for (std::size_t i = 0; i < pairs; ++i) {
    if (!scored(rec, i)) continue;
    const double e = pair_error(rec, i);
    if (rec.gt_vis[i]) {
      sum_vis += e;
      ++n_vis;
    } else {
      sum_occ += e;
      ++n_occ;
    }
  }
  AteResult r;
  if (n_vis > 0) r.vis = sum_vis / double(n_vis);
  if (n_occ > 0) r.occ = sum_occ / double(n_occ);
  return r;
}

PckResult a_pck(const EvalRecord& rec, const std::vector<double>& thresholds) {
  validate(rec);
  require(!thresholds.empty(), "metrics: empty threshold list");
  const std::size_t pairs = std::size_t(rec.n_queries) * rec.n_frames;
  std::vector<std::int64_t> hits(thresholds.size(), 0);
  std::int64_t n_vis = 0;
  for (std::size_t i = 0; i < pairs; ++i) {
    if (!scored(rec, i) || !rec.gt_vis[i]) continue;
    ++n_vis;
    const double e = pair_error(rec, i);
    for (std::size_t k = 0; k < thresholds.size(); ++k)
      if (e < thresholds[k]) ++hits[k];
  }
  PckResult r;
  if (n_vis == 0) return r;
  double total = 0;
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    r.per_threshold.push_back(double(hits[k]) / double(n_vis));
    total += r.per_threshold.back();
  }
  r.average = total / double(thresholds.size());
  return r;
}

std::optional<JaccardResult> average_jaccard(
    const EvalRecord& rec, const std::vector<double>& thresholds) {
  validate(rec);
  require(!thresholds.empty(), "metrics: empty threshold list");
  const std::size_t pairs = std::size_t(rec.n_queries) * rec.n_frames;
  JaccardResult r;
  double total = 0;
  for (double d : thresholds) {
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pairs; ++i) {
      if (!scored(rec, i)) continue;
      const bool gv = rec.gt_vis[i] != 0, pv = rec.pred_vis[i] != 0;
      const bool close = pair_error(rec, i) < d;
      if (gv && pv && close) ++tp;
      if (pv && (!gv || !close)) ++fp;
      if (gv && (!pv || !close)) ++fn;
    }
    if (tp + fp + fn == 0) return std::nullopt;
    r.per_threshold.push_back(double(tp) / double(tp + fp + fn));
    total += r.per_threshold.back();
  }
  r.average = total / double(thresholds.size());
  return r;
}

double occlusion_accuracy(const EvalRecord& rec) {
  validate(rec);
  const std::size_t pairs = std::size_t(rec.n_queries) * rec.n_frames;
  std::int64_t agree = 0, total = 0;
  for (std::size_t i = 0; i < pairs; ++i) {
    if (!scored(rec, i)) continue;
    ++total;
    if ((rec.pred_vis[i] != 0) == (rec.gt_vis[i] != 0)) ++agree;
  }
  return double(agree) / double(total);
}

MetricsSummary compute_metrics(const EvalRecord& rec,
                               const std::vector<double>& thresholds) {
  MetricsSummary m;
  m.ate = ate(rec);
  m.pck = a_pck(rec, thresholds);
  m.jaccard = average_jaccard(rec, thresholds);
  m.occ_acc = occlusion_accuracy(rec);
  return m;
}

nlohmann::json metrics_json(const MetricsSummary& m,
                            const std::vector<double>& thresholds) {
  nlohmann::json j;
  j["ate_vis"] = m.ate.vis ? nlohmann::json(*m.ate.vis) : nlohmann::json();
  j["ate_occ"] = m.ate.occ ? nlohmann::json(*m.ate.occ) : nlohmann::json();
  if (m.pck.average) {
    j["a_pck"] = *m.pck.average;
    nlohmann::json per;
    for (std::size_t k = 0; k < thresholds.size(); ++k)
      per[std::to_string(int(thresholds[k]))] = m.pck.per_threshold[k];
    j["pck"] = per;
  } else {
    j["a_pck"] = nullptr;
    j["pck"] = nullptr;
  }
  if (m.jaccard) {
    j["average_jaccard"] = m.jaccard->average;
    nlohmann::json per;
    for (std::size_t k = 0; k < thresholds.size(); ++k)
      per[std::to_string(int(thresholds[k]))] = m.jaccard->per_threshold[k];
    j["jaccard"] = per;
  } else {
    j["average_jaccard"] = nullptr;
    j["jaccard"] = nullptr;
  }
  j["occlusion_accuracy"] = m.occ_acc;
  return j;
}

SampleStrategy parse_strategy(const std::string& s) {
  if (s == "first") return SampleStrategy::kFirst;
  if (s == "strided") return SampleStrategy::kStrided;
  throw ConfigError("unknown sampling strategy '" + s +
                    "' (expected 'first' or 'strided')");
}

SampledQueries sample_queries(const std::vector<unsigned char>& gt_vis,
                              int n_tracks, int n_frames,
                              SampleStrategy strategy) {
  require(std::int64_t(gt_vis.size()) ==
              std::int64_t(n_tracks) * n_frames,
          "sample_queries: visibility shape");
  SampledQueries out;
  for (int n = 0; n < n_tracks; ++n) {
    const unsigned char* v = gt_vis.data() + std::size_t(n) * n_frames;
    bool any = false;
    if (strategy == SampleStrategy::kFirst) {
      for (int t = 0; t < n_frames; ++t)
        if (v[t]) {
          out.queries.push_back({n, t});
          any = true;
          break;
        }
    } else {
      for (int t = 0; t < n_frames; t += 5)
        if (v[t]) {
          out.queries.push_back({n, t});
          any = true;
        }
    }
    if (!any) out.skipped_tracks.push_back(n);
  }
  return out;
}

}  // namespace ptrack
