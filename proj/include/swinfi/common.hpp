#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace swinfi {

// ---------------------------------------------------------------------------
// Error types
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor extents (matmul inner dims, broadcast failures, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An op produced or was handed a NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid model or run configuration (divisibility, head widths, paths).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk container: bad magic, version, or truncated payload.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint or feature image produced under a different model config.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG
//
// std::mt19937_64 with hand-rolled output transforms so that generated
// streams depend only on the seed, not on the standard library's
// distribution implementations.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return state_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(state_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; one deviate per call, pair cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Normal(0, stddev) clipped by rejection to +/- 2 stddev.
  double truncated_normal(double stddev) {
    double z = normal();
    while (std::abs(z) > 2.0) z = normal();
    return z * stddev;
  }

  // Derive an independent child stream (e.g. per class, per split).
  Rng fork(std::uint64_t salt) const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](std::uint64_t v) {
      for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= 0x100000001b3ull;
      }
    };
    mix(seed_echo_);
    mix(salt);
    Rng child(h);
    child.seed_echo_ = h;
    return child;
  }

  static Rng seeded(std::uint64_t seed) {
    Rng r(seed);
    r.seed_echo_ = seed;
    return r;
  }

 private:
  std::mt19937_64 state_;
  std::uint64_t seed_echo_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// ---------------------------------------------------------------------------
// FNV-1a 64-bit, used for config digests.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

// ---------------------------------------------------------------------------
// Little-endian binary IO helpers.  All container formats are LE on disk;
// the helpers below assume a little-endian host (asserted in tests).
// ---------------------------------------------------------------------------

template <class T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
  static_assert(std::is_trivially_copyable_v<T>);
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("unexpected end of stream");
  return v;
}

template <class T>
void append_le(std::vector<std::uint8_t>& buf, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

template <class T>
T take_le(const std::uint8_t* p) {
  static_assert(std::is_trivially_copyable_v<T>);
  T v{};
  std::memcpy(&v, p, sizeof(T));
  return v;
}

}  // namespace swinfi
