#pragma once

// Trajectory overlay rendering: one PNG per frame with ground-truth tracks
// drawn green, predicted tracks drawn red on top of them, and each query
// marked with a hollow white square on the first frame.

#include <string>
#include <vector>

#include "ptrack/data.hpp"

namespace ptrack {

// pred: [n_pred * seq.t * 2] image-pixel coordinates for the first n_pred
// tracks of the sequence (possibly n_pred = 0: only query markers are
// drawn). Writes frame_000.png ... under out_dir and returns the number of
// files written (always seq.t).
int render_overlay(const Sequence& seq, int n_pred,
                   const std::vector<float>& pred, const std::string& out_dir);

}  // namespace ptrack
