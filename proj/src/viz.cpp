#include "ptrack/viz.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "ptrack/png_io.hpp"

namespace ptrack {

namespace {

struct Canvas {
  std::vector<unsigned char> px;  // interleaved rgb
  int h = 0, w = 0;

  void plot(int x, int y, unsigned char r, unsigned char g, unsigned char b) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    unsigned char* p = px.data() + (std::size_t(y) * w + x) * 3;
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }

  void square(int cx, int cy, int half, unsigned char r, unsigned char g,
              unsigned char b, bool filled) {
    for (int dy = -half; dy <= half; ++dy)
      for (int dx = -half; dx <= half; ++dx)
        if (filled || std::abs(dx) == half || std::abs(dy) == half)
          plot(cx + dx, cy + dy, r, g, b);
  }

  void line(float x0f, float y0f, float x1f, float y1f, unsigned char r,
            unsigned char g, unsigned char b) {
    int x0 = int(std::lround(x0f)), y0 = int(std::lround(y0f));
    const int x1 = int(std::lround(x1f)), y1 = int(std::lround(y1f));
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
      plot(x0, y0, r, g, b);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }
};

}  // namespace

int render_overlay(const Sequence& seq, int n_pred,
                   const std::vector<float>& pred,
                   const std::string& out_dir) {
  require(n_pred >= 0, "render_overlay: negative track count");
  if (n_pred > seq.n_tracks)
    throw DataError("render_overlay: " + std::to_string(n_pred) +
                    " predicted tracks but the sequence has " +
                    std::to_string(seq.n_tracks));
  if (pred.size() != std::size_t(n_pred) * seq.t * 2)
    throw DataError(
        "render_overlay: prediction array does not match n_pred * t * 2 (" +
        std::to_string(pred.size()) + " values for n_pred=" +
        std::to_string(n_pred) + ", t=" + std::to_string(seq.t) + ")");
  std::filesystem::create_directories(out_dir);

  for (int f = 0; f < seq.t; ++f) {
    Canvas cv;
    cv.h = seq.h;
    cv.w = seq.w;
    cv.px.assign(seq.frame_bytes(), 0);
    // Sequence frames are channel-planar; the canvas interleaves.
    const unsigned char* src = seq.frame(f);
    const std::size_t plane = std::size_t(seq.h) * seq.w;
    for (std::size_t i = 0; i < plane; ++i) {
      cv.px[3 * i] = src[i];
      cv.px[3 * i + 1] = src[i + plane];
      cv.px[3 * i + 2] = src[i + 2 * plane];
    }

    // Ground truth first so predictions paint over it.
    for (int n = 0; n < n_pred; ++n) {
      const float* g = seq.tracks.data() + (std::size_t(n) * seq.t) * 2;
      for (int i = 0; i + 1 < seq.t; ++i)
        cv.line(g[2 * i], g[2 * i + 1], g[2 * i + 2], g[2 * i + 3], 0, 200, 0);
      cv.square(int(std::lround(g[2 * f])), int(std::lround(g[2 * f + 1])), 1,
                0, 200, 0, true);
    }
    for (int n = 0; n < n_pred; ++n) {
      const float* p = pred.data() + (std::size_t(n) * seq.t) * 2;
      for (int i = 0; i + 1 < seq.t; ++i)
        cv.line(p[2 * i], p[2 * i + 1], p[2 * i + 2], p[2 * i + 3], 220, 0, 0);
      cv.square(int(std::lround(p[2 * f])), int(std::lround(p[2 * f + 1])), 1,
                220, 0, 0, true);
    }
    if (f == 0) {
      // Query markers: every track's starting location on the first frame.
      for (int n = 0; n < seq.n_tracks; ++n) {
        const float* g = seq.tracks.data() + (std::size_t(n) * seq.t) * 2;
        cv.square(int(std::lround(g[0])), int(std::lround(g[1])), 3, 255, 255,
                  255, false);
      }
    }

    char name[32];
    std::snprintf(name, sizeof name, "frame_%03d.png", f);
    write_png_rgb((std::filesystem::path(out_dir) / name).string(),
                  cv.px.data(), seq.h, seq.w);
  }
  return seq.t;
}

}  // namespace ptrack
