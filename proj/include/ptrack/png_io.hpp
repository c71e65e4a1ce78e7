#pragma once

// Minimal dependency-free PNG output: 8-bit RGB, stored (uncompressed)
// deflate blocks inside a valid zlib stream. Bytes are written identically
// on every platform, so rendered overlays are reproducible artifacts.

#include <string>

namespace ptrack {

// rgb: [3*h*w] channel-interleaved rows (r, g, b per pixel).
void write_png_rgb(const std::string& path, const unsigned char* rgb, int h,
                   int w);

}  // namespace ptrack
