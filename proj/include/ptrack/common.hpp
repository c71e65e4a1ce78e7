#pragma once

#include <array>
#include <cstdint>
#include <cstdlib>
#include <numeric>
#include <stdexcept>
#include <string>

namespace ptrack {

// Exit codes used by the CLI. Everything else maps to 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {  // exit 2
  using Error::Error;
};
struct DataError : Error {  // exit 3
  using Error::Error;
};
struct NumericError : Error {  // exit 4
  using Error::Error;
};

// Dense row-major shape, up to 3 axes. For 3-axis tensors (channels, h, w)
// most row-wise ops treat the buffer as d0 x (d1*d2).
struct Shape {
  std::array<int, 3> d{1, 1, 1};
  int nd = 0;

  Shape() = default;
  Shape(int a) : d{a, 1, 1}, nd(1) {}
  Shape(int a, int b) : d{a, b, 1}, nd(2) {}
  Shape(int a, int b, int c) : d{a, b, c}, nd(3) {}

  std::int64_t numel() const {
    return std::int64_t(d[0]) * d[1] * d[2];
  }
  int rows() const { return d[0]; }
  int cols() const { return nd <= 1 ? 1 : d[1] * d[2]; }
  bool operator==(const Shape& o) const { return nd == o.nd && d == o.d; }

  std::string str() const {
    std::string s = "[";
    for (int i = 0; i < nd; ++i) s += (i ? "," : "") + std::to_string(d[i]);
    return s + "]";
  }
};

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// PTRACK_DETERMINISTIC=1 forces single-threaded, fixed-order execution.
// Every current code path is sequential and seed-determined anyway; the
// variable pins that guarantee against future parallel fast paths.
inline bool deterministic_mode() {
  const char* e = std::getenv("PTRACK_DETERMINISTIC");
  return e != nullptr && e[0] == '1' && e[1] == '\0';
}

// Thread budget for the outer query/frame loops. PTRACK_THREADS pins the
// count; deterministic mode overrides it back to 1.
inline int thread_budget() {
#ifdef _OPENMP
  if (deterministic_mode()) return 1;
  if (const char* e = std::getenv("PTRACK_THREADS")) {
    int v = std::atoi(e);
    if (v >= 1) return v;
  }
  return 1;  // default stays sequential so results never depend on the host
#else
  return 1;
#endif
}

}  // namespace ptrack
