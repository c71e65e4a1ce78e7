#pragma once

// Evaluation runner: loads a checkpoint, tracks every sampled query through
// every sequence in a dataset (forward from the query frame; also backward
// over the reversed frames for the strided strategy), scores the predictions
// with the metric suite, and emits a deterministic JSON report with
// per-sequence and aggregate numbers.

#include <string>

#include "json.hpp"
#include "ptrack/metrics.hpp"

namespace ptrack {

// strategy: "first" or "strided". k_test: refinement iterations at test time
// (may differ from the trained K). Throws ConfigError on checkpoint version
// mismatch and DataError on an empty dataset.
nlohmann::json evaluate(const std::string& ckpt_path,
                        const std::string& data_dir,
                        const std::string& strategy, int k_test);

}  // namespace ptrack
