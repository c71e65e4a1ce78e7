#pragma once

// Tracking evaluation metrics over aligned prediction/ground-truth records,
// plus the query sampling strategies used by the evaluation runner. Distances
// are in image pixels; the standard thresholds {1,2,4,8,16} assume a fixed
// evaluation resolution, so rescaled sequences need rescaled thresholds.

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ptrack/common.hpp"

namespace ptrack {

inline const std::vector<double> kPckThresholds = {1, 2, 4, 8, 16};

struct EvalRecord {
  int n_queries = 0;
  int n_frames = 0;
  std::vector<double> pred;             // [n*t*2] (x, y) image pixels
  std::vector<unsigned char> pred_vis;  // [n*t]
  std::vector<double> gt;               // [n*t*2]
  std::vector<unsigned char> gt_vis;    // [n*t]
  // Optional scoring mask [n*t]; empty means every pair is scored. "first"
  // sampling masks the frames before each query, which are never tracked.
  std::vector<unsigned char> counted;
};

void validate(const EvalRecord& rec);

struct AteResult {
  std::optional<double> vis;  // mean L2 over gt-visible pairs
  std::optional<double> occ;  // mean L2 over gt-occluded pairs
};

AteResult ate(const EvalRecord& rec);

struct PckResult {
  std::vector<double> per_threshold;  // empty when undefined
  std::optional<double> average;
};

// Fraction of gt-visible pairs with error strictly below each threshold.
PckResult a_pck(const EvalRecord& rec,
                const std::vector<double>& thresholds = kPckThresholds);

struct JaccardResult {
  std::vector<double> per_threshold;
  double average = 0.0;
};

// Per threshold d: TP = gt-vis and pred-vis and err < d; FP = pred-vis and
// (gt-occ or err >= d); FN = gt-vis and (pred-occ or err >= d). A pair that
// is visible on both sides but off by >= d counts as both FP and FN.
std::optional<JaccardResult> average_jaccard(
    const EvalRecord& rec,
    const std::vector<double>& thresholds = kPckThresholds);

double occlusion_accuracy(const EvalRecord& rec);

struct MetricsSummary {
  AteResult ate;
  PckResult pck;
  std::optional<JaccardResult> jaccard;
  double occ_acc = 0.0;
};

MetricsSummary compute_metrics(
    const EvalRecord& rec,
    const std::vector<double>& thresholds = kPckThresholds);

// JSON object keyed by metric name; undefined values serialize as null.
nlohmann::json metrics_json(const MetricsSummary& m,
                            const std::vector<double>& thresholds =
                                kPckThresholds);

enum class SampleStrategy { kFirst, kStrided };

SampleStrategy parse_strategy(const std::string& s);

struct QuerySpec {
  int track = 0;
  int frame = 0;  // query frame; evaluation tracks forward and backward
};

struct SampledQueries {
  std::vector<QuerySpec> queries;
  std::vector<int> skipped_tracks;  // never visible in the ground truth
};

// "first": the earliest gt-visible frame of each track. "strided": every 5th
// frame (0, 5, 10, ...) where the track is gt-visible.
SampledQueries sample_queries(const std::vector<unsigned char>& gt_vis,
                              int n_tracks, int n_frames,
                              SampleStrategy strategy);

}  // namespace ptrack
