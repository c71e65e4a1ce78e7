#pragma once

// Long-video tracking by overlapping windows. Windows start at 0, T-1,
// 2(T-1), ... with a one-frame overlap; the final window is pulled back to
// T_total - T so it is always full and contributes only frames nobody else
// emitted. Each window re-seeds the query at the already-emitted estimate for
// its first frame (the previous window's last frame on the regular cadence),
// clamped into the image so a point that drifted out can still be tracked
// when it returns. Lost points are not re-identified.

#include <array>
#include <vector>

#include "ptrack/refiner.hpp"

namespace ptrack {

template <typename S>
void clamp_to_image(S* x, S* y, int img_w, int img_h) {
  *x = std::min(std::max(*x, S(0)), S(img_w - 1));
  *y = std::min(std::max(*y, S(0)), S(img_h - 1));
}

// Window start frames for a video of length t_total with window length t.
inline std::vector<int> window_starts(int t_total, int t) {
  require(t >= 2, "window_starts: window must cover at least two frames");
  if (t_total < t)
    throw DataError("track_video: video has " + std::to_string(t_total) +
                    " frames, shorter than the window length " +
                    std::to_string(t));
  std::vector<int> starts = {0};
  while (starts.back() + t < t_total) {
    int next = starts.back() + (t - 1);
    if (next + t > t_total) next = t_total - t;
    starts.push_back(next);
  }
  return starts;
}

template <typename S>
struct VideoTrack {
  std::vector<std::array<S, 2>> pos;  // [t_total] image pixels
  std::vector<S> vis;                 // [t_total] probabilities
};

// fmaps: one [C*h*w] buffer per video frame. Queries are image pixels on
// frame 0. Each query is chained independently.
template <typename S>
std::vector<VideoTrack<S>> track_video(
    const TrackModel<S>& model, const std::vector<const S*>& fmaps, int h,
    int w, const std::vector<std::array<S, 2>>& queries_px, int k_iters,
    int img_h, int img_w) {
  const int t = model.config().t_window;
  const int t_total = int(fmaps.size());
  const auto starts = window_starts(t_total, t);
  std::vector<VideoTrack<S>> out(queries_px.size());
  for (std::size_t qi = 0; qi < queries_px.size(); ++qi) {
    auto& vt = out[qi];
    vt.pos.resize(std::size_t(t_total));
    vt.vis.resize(std::size_t(t_total));
    int done = 0;  // frames emitted so far
    for (int s : starts) {
      // The original query must be in bounds (track_window throws); a
      // re-seed may have drifted out of the image, so clamp it back.
      std::array<S, 2> seed =
          (s == 0) ? queries_px[qi] : vt.pos[std::size_t(s)];
      if (s > 0) clamp_to_image(&seed[0], &seed[1], img_w, img_h);
      std::vector<const S*> win(fmaps.begin() + s, fmaps.begin() + s + t);
      auto tracks =
          track_window(model, win, h, w, {seed}, k_iters, img_h, img_w);
      const auto& final_iter = tracks[0].iters.back();
      for (int i = 0; i < t; ++i) {
        const int f = s + i;
        if (f < done) continue;
        vt.pos[std::size_t(f)] = final_iter[std::size_t(i)];
        vt.vis[std::size_t(f)] = tracks[0].vis[std::size_t(i)];
      }
      done = s + t;
    }
  }
  return out;
}

}  // namespace ptrack
