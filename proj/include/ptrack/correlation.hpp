#pragma once

// Per-point multi-scale correlation: correlate one feature vector against a
// frame map, then pool the similarity map into an L-level pyramid and sample
// fixed-size crops around a (possibly sub-pixel) center.
//
// Crop layout is frozen: level-major, then dy-major, dx-minor. Downstream
// linear layers depend on this ordering.

#include <utility>
#include <vector>

#include "ptrack/tensor.hpp"

namespace ptrack {

inline constexpr int kPyramidLevels = 4;
inline constexpr int kCropRadius = 3;
inline constexpr int kCropLen = kPyramidLevels * (2 * kCropRadius + 1) *
                                (2 * kCropRadius + 1);  // 196
static_assert(kCropLen == 196);

inline int crop_len(int levels, int radius) {
  const int side = 2 * radius + 1;
  return levels * side * side;
}

// Level dims under repeated ceil-halving.
inline std::vector<std::pair<int, int>> pyramid_dims(int h, int w, int levels) {
  std::vector<std::pair<int, int>> d;
  d.reserve(std::size_t(levels));
  for (int l = 0; l < levels; ++l) {
    d.emplace_back(h, w);
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  return d;
}

// rows f: [R, C] against map [C, h, w] (or [C, h*w]); output [R, h*w], one
// similarity map per row: out[r, y*w+x] = dot(f_r, map[:, y, x]).
template <typename S>
Var<S> point_correlation(Graph<S>& g, Var<S> f, Var<S> fmap) {
  require(f.p->cols() == fmap.p->rows(),
          "point_correlation: channel mismatch " + f.shape().str() + " vs " +
              fmap.shape().str());
  return matmul(g, f, fmap);
}

// Rows of `maps` are independent (h, w) similarity maps; returns the L-level
// pyramid, level 0 being the input itself.
template <typename S>
std::vector<Var<S>> build_pyramid(Graph<S>& g, Var<S> maps, int h, int w,
                                  int levels) {
  require(levels >= 1, "build_pyramid: levels >= 1");
  std::vector<Var<S>> pyr;
  pyr.reserve(std::size_t(levels));
  pyr.push_back(maps);
  for (int l = 1; l < levels; ++l) {
    pyr.push_back(avgpool_rows(g, pyr.back(), h, w));
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  return pyr;
}

// Crop every pyramid row around its centers (see crop_pyramid in tensor.hpp
// for the group convention). Convenience wrapper fixing dims bookkeeping.
template <typename S>
Var<S> crop_pyramid_at(Graph<S>& g, const std::vector<Var<S>>& pyr, int h,
                       int w, Var<S> centers, int group, int radius) {
  return crop_pyramid(g, pyr, pyramid_dims(h, w, int(pyr.size())), centers,
                      group, radius);
}

}  // namespace ptrack
