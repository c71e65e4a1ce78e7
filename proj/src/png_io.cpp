#include "ptrack/png_io.hpp"

#include <array>
#include <cstdint>
#include <fstream>
#include <vector>

#include "ptrack/common.hpp"

namespace ptrack {

namespace {

std::uint32_t crc32_update(std::uint32_t crc, const unsigned char* p,
                           std::size_t n) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k)
        c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  for (std::size_t i = 0; i < n; ++i)
    crc = table[(crc ^ p[i]) & 0xffu] ^ (crc >> 8);
  return ~crc;
}

std::uint32_t adler32(const unsigned char* p, std::size_t n) {
  std::uint32_t a = 1, b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    a = (a + p[i]) % 65521u;
    b = (b + a) % 65521u;
  }
  return (b << 16) | a;
}

void push_u32_be(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back((unsigned char)(v >> 24));
  out.push_back((unsigned char)(v >> 16));
  out.push_back((unsigned char)(v >> 8));
  out.push_back((unsigned char)v);
}

void push_chunk(std::vector<unsigned char>& out, const char type[4],
                const std::vector<unsigned char>& data) {
  push_u32_be(out, std::uint32_t(data.size()));
  std::vector<unsigned char> body(type, type + 4);
  body.insert(body.end(), data.begin(), data.end());
  out.insert(out.end(), body.begin(), body.end());
  push_u32_be(out, crc32_update(0, body.data(), body.size()));
}

}  // namespace

void write_png_rgb(const std::string& path, const unsigned char* rgb, int h,
                   int w) {
  require(h >= 1 && w >= 1, "write_png_rgb: empty image");

  // Raw scanlines: one filter byte (0 = none) per row.
  const std::size_t row = std::size_t(w) * 3;
  std::vector<unsigned char> raw;
  raw.reserve((row + 1) * std::size_t(h));
  for (int y = 0; y < h; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), rgb + std::size_t(y) * row,
               rgb + std::size_t(y) * row + row);
  }

  // zlib stream with stored deflate blocks.
  std::vector<unsigned char> z;
  z.push_back(0x78);
  z.push_back(0x01);
  std::size_t off = 0;
  while (off < raw.size()) {
    const std::size_t chunk = std::min<std::size_t>(65535, raw.size() - off);
    const bool last = off + chunk == raw.size();
    z.push_back(last ? 1 : 0);
    z.push_back((unsigned char)(chunk & 0xff));
    z.push_back((unsigned char)(chunk >> 8));
    z.push_back((unsigned char)(~chunk & 0xff));
    z.push_back((unsigned char)((~chunk >> 8) & 0xff));
    z.insert(z.end(), raw.begin() + std::ptrdiff_t(off),
             raw.begin() + std::ptrdiff_t(off + chunk));
    off += chunk;
  }
  push_u32_be(z, adler32(raw.data(), raw.size()));

  std::vector<unsigned char> png = {137, 80, 78, 71, 13, 10, 26, 10};
  std::vector<unsigned char> ihdr;
  push_u32_be(ihdr, std::uint32_t(w));
  push_u32_be(ihdr, std::uint32_t(h));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // truecolor
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // no interlace
  push_chunk(png, "IHDR", ihdr);
  push_chunk(png, "IDAT", z);
  push_chunk(png, "IEND", {});

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_png_rgb: cannot open '" + path + "'");
  out.write(reinterpret_cast<const char*>(png.data()),
            std::streamsize(png.size()));
  out.close();
  if (!out) throw DataError("write_png_rgb: write failed for '" + path + "'");
}

}  // namespace ptrack
