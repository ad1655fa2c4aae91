// Copyright 2026 The RSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef RSE_UTIL_HPP_
#define RSE_UTIL_HPP_

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace rse {

constexpr double kPi = 3.14159265358979323846;
constexpr double kSoundSpeed = 343.0;  // m/s, configurable at call sites

// Error taxonomy maps onto CLI exit codes: config=2, data=3, numeric=4.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

// Wrap an angle in degrees to [-180, 180).
inline double wrap_deg(double d) {
  double w = std::fmod(d + 180.0, 360.0);
  if (w < 0.0) w += 360.0;
  return w - 180.0;
}

// Wrap to [0, 360).
inline double wrap_deg_360(double d) {
  double w = std::fmod(d, 360.0);
  if (w < 0.0) w += 360.0;
  return w;
}

// Wrap a phase in radians to (-pi, pi].
inline double wrap_pm_pi(double r) {
  double w = std::fmod(r, 2.0 * kPi);
  if (w <= -kPi) w += 2.0 * kPi;
  if (w > kPi) w -= 2.0 * kPi;
  return w;
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic RNG. Streams derived with fork() are independent of draw
// order in the parent, so scene generation stays reproducible when pieces
// are generated in parallel or skipped.
class Rng {
 public:
  explicit Rng(uint64_t seed) : s_(splitmix64(seed ^ 0x5851f42d4c957f2dULL)) {
    // xoshiro256** state from splitmix64, per the reference initialization
    for (int i = 0; i < 4; ++i) {
      s_ = splitmix64(s_);
      state_[i] = s_;
    }
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform double in [0, 1) with 53 bits.
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  uint64_t randint(uint64_t n) {
    if (n == 0) throw NumericError("randint: n must be positive");
    return next_u64() % n;
  }

  // Integer in [lo, hi] inclusive.
  int64_t randint(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(randint(static_cast<uint64_t>(hi - lo + 1)));
  }

  // Standard normal via Box-Muller; second value cached.
  double gauss() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
  }

  double gauss(double mean, double stddev) { return mean + stddev * gauss(); }

  // Derived independent stream; tag selects the child.
  Rng fork(uint64_t tag) const {
    return Rng(splitmix64(state_[0] ^ splitmix64(tag + 0x9e3779b97f4a7c15ULL)));
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_ = 0;
  uint64_t state_[4] = {};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline double signal_energy(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

inline double signal_rms(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  return std::sqrt(signal_energy(x) / static_cast<double>(x.size()));
}

inline bool all_finite(const std::vector<double>& x) {
  for (double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace rse

#endif  // RSE_UTIL_HPP_
