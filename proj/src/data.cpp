#include "ptrack/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "ptrack/rng.hpp"

namespace fs = std::filesystem;

namespace ptrack {

void validate(const SeqConfig& cfg) {
  require(cfg.t >= 2, "sequence config: t must be >= 2");
  require(cfg.h >= 16 && cfg.w >= 16, "sequence config: frame too small");
  require(cfg.sprites_min >= 0 && cfg.sprites_max >= cfg.sprites_min,
          "sequence config: bad sprite range");
  require(cfg.n_tracks >= 1, "sequence config: need at least one track");
  require(cfg.motion >= 0 && cfg.texture_scale > 0,
          "sequence config: motion and texture scale must be non-negative");
}

bool operator==(const Sequence& a, const Sequence& b) {
  return a.t == b.t && a.h == b.h && a.w == b.w && a.n_tracks == b.n_tracks &&
         a.seed == b.seed && a.frames == b.frames && a.tracks == b.tracks &&
         a.vis == b.vis;
}

namespace {

std::uint64_t hash64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double lattice(std::uint64_t seed, std::int64_t i, std::int64_t j) {
  const std::uint64_t h =
      hash64(hash64(seed ^ std::uint64_t(i)) ^ std::uint64_t(j));
  return double(h >> 11) * 0x1.0p-53;
}

double smooth(double f) { return f * f * (3.0 - 2.0 * f); }

double noise_octave(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = std::int64_t(fx), iy = std::int64_t(fy);
  const double tx = smooth(x - fx), ty = smooth(y - fy);
  const double v00 = lattice(seed, ix, iy), v10 = lattice(seed, ix + 1, iy);
  const double v01 = lattice(seed, ix, iy + 1),
               v11 = lattice(seed, ix + 1, iy + 1);
  const double a = v00 + (v10 - v00) * tx, b = v01 + (v11 - v01) * tx;
  return a + (b - a) * ty;
}

double noise2(std::uint64_t seed, double x, double y) {
  return 0.65 * noise_octave(seed, x, y) +
         0.35 * noise_octave(seed ^ 0x9e3779b9ull, 2.0 * x + 17.0,
                             2.0 * y - 11.0);
}

// 1/8-px grid keeps pure-translation tracks exact in float32.
double q8(double v) { return std::round(v * 8.0) / 8.0; }

struct Sprite {
  double cx0 = 0, cy0 = 0, vx = 0, vy = 0, omega = 0, rho = 0, radius = 0;
  double base[3] = {0, 0, 0};
  std::uint64_t tex = 0;

  double cx(int t) const { return cx0 + vx * t; }
  double cy(int t) const { return cy0 + vy * t; }
  double theta(int t) const { return omega * t; }
  double scale(int t) const { return 1.0 + rho * t; }

  // world -> material coordinates at frame t
  void to_material(int t, double x, double y, double* mx, double* my) const {
    const double s = scale(t), th = theta(t);
    const double dx = (x - cx(t)) / s, dy = (y - cy(t)) / s;
    const double c = std::cos(th), sn = std::sin(th);
    *mx = c * dx + sn * dy;
    *my = -sn * dx + c * dy;
  }

  bool covers(int t, double x, double y) const {
    double mx, my;
    to_material(t, x, y, &mx, &my);
    return mx * mx + my * my <= radius * radius;
  }

  // material -> world at frame t
  void to_world(int t, double mx, double my, double* x, double* y) const {
    const double s = scale(t), th = theta(t);
    const double c = std::cos(th), sn = std::sin(th);
    *x = cx(t) + s * (c * mx - sn * my);
    *y = cy(t) + s * (sn * mx + c * my);
  }
};

unsigned char to_u8(double v) {
  v = std::min(std::max(v, 0.0), 1.0);
  return static_cast<unsigned char>(std::lround(v * 255.0));
}

}  // namespace

Sequence generate(std::uint64_t seed, const SeqConfig& cfg) {
  validate(cfg);
  Rng rng(seed);
  const int t_total = cfg.t, h = cfg.h, w = cfg.w;
  const double min_dim = double(std::min(h, w));

  const int ns = int(rng.uniform_int(cfg.sprites_min, cfg.sprites_max));
  std::vector<Sprite> sprites(static_cast<std::size_t>(ns));
  const double max_rho =
      std::min(0.015 * cfg.zoom, 0.25 / std::max(1, t_total - 1));
  for (int i = 0; i < ns; ++i) {
    Sprite& s = sprites[std::size_t(i)];
    s.radius = (0.11 + 0.09 * rng.uniform()) * min_dim;
    s.cx0 = q8(rng.uniform(0.2 * w, 0.8 * w));
    s.cy0 = q8(rng.uniform(0.2 * h, 0.8 * h));
    if (cfg.uniform_translation) {
      s.vx = q8(cfg.motion);
      s.vy = 0;
    } else {
      s.vx = q8(rng.uniform(-cfg.motion, cfg.motion));
      s.vy = q8(rng.uniform(-cfg.motion, cfg.motion));
      s.omega = rng.uniform(-0.04, 0.04) * cfg.spin;
      s.rho = rng.uniform(-max_rho, max_rho);
    }
    for (double& b : s.base) b = rng.uniform(0.15, 0.85);
    s.tex = hash64(seed + 0x51ED'0000ull + std::uint64_t(i));
  }
  double bg_base[3];
  for (double& b : bg_base) b = rng.uniform(0.3, 0.7);
  const std::uint64_t bg_tex = hash64(seed + 0xBA5Eull);

  Sequence seq;
  seq.t = t_total;
  seq.h = h;
  seq.w = w;
  seq.n_tracks = cfg.n_tracks;
  seq.seed = seed;
  seq.config = cfg;
  seq.tracks.assign(std::size_t(cfg.n_tracks) * t_total * 2, 0.0f);
  seq.vis.assign(std::size_t(cfg.n_tracks) * t_total, 0);

  // Track points: world position by the owner's transform; occluded when out
  // of frame or under any strictly higher-z sprite (z is the sprite index,
  // background below everything).
  for (int n = 0; n < cfg.n_tracks; ++n) {
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      const int owner = (ns == 0 || rng.uniform() < 0.3)
                            ? -1
                            : int(rng.uniform_int(0, ns - 1));
      double mx = 0, my = 0;
      if (owner < 0) {
        mx = q8(rng.uniform(2.0, w - 3.0));
        my = q8(rng.uniform(2.0, h - 3.0));
      } else {
        const Sprite& s = sprites[std::size_t(owner)];
        const double rr = s.radius * 0.9 * std::sqrt(rng.uniform());
        const double ang = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        // snap the frame-0 world position to the 1/8 grid
        const double wx = q8(s.cx0 + rr * std::cos(ang));
        const double wy = q8(s.cy0 + rr * std::sin(ang));
        mx = wx - s.cx0;
        my = wy - s.cy0;
        if (mx * mx + my * my > s.radius * s.radius) continue;
      }
      std::vector<float> pos(std::size_t(t_total) * 2);
      std::vector<unsigned char> vis(std::size_t(t_total), 0);
      bool any = false;
      for (int t = 0; t < t_total; ++t) {
        double x, y;
        if (owner < 0) {
          x = mx;
          y = my;
        } else {
          sprites[std::size_t(owner)].to_world(t, mx, my, &x, &y);
        }
        pos[std::size_t(t) * 2] = float(x);
        pos[std::size_t(t) * 2 + 1] = float(y);
        bool visible = x >= 0 && x <= w - 1 && y >= 0 && y <= h - 1;
        for (int j = owner + 1; j < ns && visible; ++j)
          if (sprites[std::size_t(j)].covers(t, x, y)) visible = false;
        vis[std::size_t(t)] = visible ? 1 : 0;
        any = any || visible;
      }
      if (!any) continue;
      std::copy(pos.begin(), pos.end(),
                seq.tracks.begin() + std::size_t(n) * t_total * 2);
      std::copy(vis.begin(), vis.end(),
                seq.vis.begin() + std::size_t(n) * t_total);
      placed = true;
    }
    if (!placed)
      throw DataError("generate: no visible placement found for track " +
                      std::to_string(n) + " (motion too large for the frame?)");
  }

  // Background is static: render it once and repaint sprites per frame.
  std::vector<unsigned char> bg(std::size_t(3) * h * w);
  const double bg_ts = 2.0 * cfg.texture_scale;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        bg[(std::size_t(c) * h + y) * w + x] =
            to_u8(bg_base[c] +
                  0.7 * (noise2(bg_tex + std::uint64_t(c) * 0x777ull, x / bg_ts,
                                y / bg_ts) -
                         0.5));

  seq.frames.resize(std::size_t(t_total) * 3 * h * w);
  for (int t = 0; t < t_total; ++t) {
    unsigned char* fr = seq.frames.data() + std::size_t(t) * 3 * h * w;
    std::memcpy(fr, bg.data(), bg.size());
    for (int i = 0; i < ns; ++i) {
      const Sprite& s = sprites[std::size_t(i)];
      const double reach = s.radius * s.scale(t);
      const int x0 = std::max(0, int(std::floor(s.cx(t) - reach)));
      const int x1 = std::min(w - 1, int(std::ceil(s.cx(t) + reach)));
      const int y0 = std::max(0, int(std::floor(s.cy(t) - reach)));
      const int y1 = std::min(h - 1, int(std::ceil(s.cy(t) + reach)));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          double mx, my;
          s.to_material(t, double(x), double(y), &mx, &my);
          if (mx * mx + my * my > s.radius * s.radius) continue;
          for (int c = 0; c < 3; ++c)
            fr[(std::size_t(c) * h + y) * w + x] =
                to_u8(s.base[c] +
                      0.8 * (noise2(s.tex + std::uint64_t(c) * 0x333ull,
                                    mx / cfg.texture_scale,
                                    my / cfg.texture_scale) -
                             0.5));
        }
    }
  }
  return seq;
}

nlohmann::json to_json(const SeqConfig& cfg) {
  return {{"t", cfg.t},
          {"h", cfg.h},
          {"w", cfg.w},
          {"sprites_min", cfg.sprites_min},
          {"sprites_max", cfg.sprites_max},
          {"n_tracks", cfg.n_tracks},
          {"motion", cfg.motion},
          {"spin", cfg.spin},
          {"zoom", cfg.zoom},
          {"texture_scale", cfg.texture_scale},
          {"uniform_translation", cfg.uniform_translation}};
}

SeqConfig seq_config_from_json(const nlohmann::json& j) {
  SeqConfig cfg;
  cfg.t = j.value("t", cfg.t);
  cfg.h = j.value("h", cfg.h);
  cfg.w = j.value("w", cfg.w);
  cfg.sprites_min = j.value("sprites_min", cfg.sprites_min);
  cfg.sprites_max = j.value("sprites_max", cfg.sprites_max);
  cfg.n_tracks = j.value("n_tracks", cfg.n_tracks);
  cfg.motion = j.value("motion", cfg.motion);
  cfg.spin = j.value("spin", cfg.spin);
  cfg.zoom = j.value("zoom", cfg.zoom);
  cfg.texture_scale = j.value("texture_scale", cfg.texture_scale);
  cfg.uniform_translation =
      j.value("uniform_translation", cfg.uniform_translation);
  return cfg;
}

namespace {

void write_bytes(const std::string& path, const unsigned char* data,
                 std::size_t n) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError(path + ": cannot open for writing");
  f.write(reinterpret_cast<const char*>(data), std::streamsize(n));
  if (!f) throw DataError(path + ": write failed");
}

void read_bytes(const std::string& path, unsigned char* data, std::size_t n,
                const char* what) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f)
    throw DataError(path + ": cannot open (" + what + " missing?)");
  const auto size = std::size_t(f.tellg());
  if (size != n)
    throw DataError(path + ": " + what + " expected " + std::to_string(n) +
                    " bytes, found " + std::to_string(size));
  f.seekg(0);
  f.read(reinterpret_cast<char*>(data), std::streamsize(n));
  if (!f) throw DataError(path + ": short read on " + what);
}

// float32 arrays are stored little-endian regardless of host order
std::vector<unsigned char> pack_f32(const std::vector<float>& v) {
  std::vector<unsigned char> out(v.size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint32_t u;
    std::memcpy(&u, &v[i], 4);
    out[4 * i] = u & 0xff;
    out[4 * i + 1] = (u >> 8) & 0xff;
    out[4 * i + 2] = (u >> 16) & 0xff;
    out[4 * i + 3] = (u >> 24) & 0xff;
  }
  return out;
}

std::vector<float> unpack_f32(const std::vector<unsigned char>& b) {
  std::vector<float> out(b.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::uint32_t u = std::uint32_t(b[4 * i]) |
                            (std::uint32_t(b[4 * i + 1]) << 8) |
                            (std::uint32_t(b[4 * i + 2]) << 16) |
                            (std::uint32_t(b[4 * i + 3]) << 24);
    std::memcpy(&out[i], &u, 4);
  }
  return out;
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream f(path);
  if (!f) throw DataError(path + ": cannot open for writing");
  f << j.dump(2) << "\n";
  if (!f) throw DataError(path + ": write failed");
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError(path + ": cannot open (meta.json missing?)");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": invalid JSON (" + e.what() + ")");
  }
  return j;
}

}  // namespace

void save_sequence(const Sequence& seq, const std::string& dir) {
  fs::create_directories(dir);
  nlohmann::json meta = {{"t", seq.t},
                         {"h", seq.h},
                         {"w", seq.w},
                         {"n_tracks", seq.n_tracks},
                         {"seed", seq.seed},
                         {"config", to_json(seq.config)}};
  write_json(dir + "/meta.json", meta);
  write_bytes(dir + "/frames.bin", seq.frames.data(), seq.frames.size());
  const auto packed = pack_f32(seq.tracks);
  write_bytes(dir + "/tracks.bin", packed.data(), packed.size());
  write_bytes(dir + "/visibility.bin", seq.vis.data(), seq.vis.size());
}

Sequence load_sequence(const std::string& dir) {
  const nlohmann::json meta = read_json(dir + "/meta.json");
  Sequence seq;
  try {
    seq.t = meta.at("t").get<int>();
    seq.h = meta.at("h").get<int>();
    seq.w = meta.at("w").get<int>();
    seq.n_tracks = meta.at("n_tracks").get<int>();
    seq.seed = meta.at("seed").get<std::uint64_t>();
    if (meta.contains("config"))
      seq.config = seq_config_from_json(meta.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(dir + "/meta.json: missing or bad field (" +
                    std::string(e.what()) + ")");
  }
  require(seq.t >= 1 && seq.h >= 1 && seq.w >= 1 && seq.n_tracks >= 0,
          dir + "/meta.json: non-positive shapes");
  seq.frames.resize(std::size_t(seq.t) * 3 * seq.h * seq.w);
  read_bytes(dir + "/frames.bin", seq.frames.data(), seq.frames.size(),
             "frames array");
  std::vector<unsigned char> packed(std::size_t(seq.n_tracks) * seq.t * 2 * 4);
  read_bytes(dir + "/tracks.bin", packed.data(), packed.size(),
             "tracks array");
  seq.tracks = unpack_f32(packed);
  seq.vis.resize(std::size_t(seq.n_tracks) * seq.t);
  read_bytes(dir + "/visibility.bin", seq.vis.data(), seq.vis.size(),
             "visibility array");
  return seq;
}

std::vector<std::string> list_sequence_dirs(const std::string& root) {
  if (!fs::is_directory(root))
    throw DataError(root + ": not a directory");
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "meta.json"))
      names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  // Joined after sorting so the order is by name regardless of root.
  std::vector<std::string> paths;
  paths.reserve(names.size());
  for (const auto& n : names) paths.push_back((fs::path(root) / n).string());
  return paths;
}

Sequence flip_sequence(const Sequence& seq, bool horizontal, bool vertical) {
  Sequence out = seq;
  for (int t = 0; t < seq.t; ++t)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < seq.h; ++y)
        for (int x = 0; x < seq.w; ++x) {
          const int sx = horizontal ? seq.w - 1 - x : x;
          const int sy = vertical ? seq.h - 1 - y : y;
          out.frames[((std::size_t(t) * 3 + c) * seq.h + y) * seq.w + x] =
              seq.frames[((std::size_t(t) * 3 + c) * seq.h + sy) * seq.w + sx];
        }
  for (int n = 0; n < seq.n_tracks; ++n)
    for (int t = 0; t < seq.t; ++t) {
      float* p = out.tracks.data() + (std::size_t(n) * seq.t + t) * 2;
      if (horizontal) p[0] = float(seq.w - 1) - p[0];
      if (vertical) p[1] = float(seq.h - 1) - p[1];
    }
  return out;
}

void save_predictions(const std::string& dir, int n, int t,
                      const std::vector<float>& tracks,
                      const std::vector<unsigned char>& vis) {
  require(std::int64_t(tracks.size()) == std::int64_t(n) * t * 2 &&
              std::int64_t(vis.size()) == std::int64_t(n) * t,
          "save_predictions: shape mismatch");
  fs::create_directories(dir);
  write_json(dir + "/meta.json", {{"n_tracks", n}, {"t", t}});
  const auto packed = pack_f32(tracks);
  write_bytes(dir + "/tracks.bin", packed.data(), packed.size());
  write_bytes(dir + "/visibility.bin", vis.data(), vis.size());
}

void load_predictions(const std::string& dir, int* n, int* t,
                      std::vector<float>* tracks,
                      std::vector<unsigned char>* vis) {
  const nlohmann::json meta = read_json(dir + "/meta.json");
  try {
    *n = meta.at("n_tracks").get<int>();
    *t = meta.at("t").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(dir + "/meta.json: missing or bad field (" +
                    std::string(e.what()) + ")");
  }
  std::vector<unsigned char> packed(std::size_t(*n) * *t * 2 * 4);
  read_bytes(dir + "/tracks.bin", packed.data(), packed.size(),
             "tracks array");
  *tracks = unpack_f32(packed);
  vis->resize(std::size_t(*n) * *t);
  read_bytes(dir + "/visibility.bin", vis->data(), vis->size(),
             "visibility array");
}

}  // namespace ptrack
