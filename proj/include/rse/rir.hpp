// Copyright 2026 The RSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Shoebox room impulse responses via the image-source method.
// Wall reflectivity comes from the target reverberation time through
// Eyring's relation, the direct path is laid down with a windowed-sinc
// fractional delay, and reflections land on the nearest sample.

#ifndef RSE_RIR_HPP_
#define RSE_RIR_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rse/geometry.hpp"
#include "rse/util.hpp"

namespace rse {

struct RoomSpec {
  double lx = 5.0, ly = 4.0, lz = 3.0;  // meters
  double t60 = 0.3;                     // seconds; 0 = anechoic (direct path only)
  int sample_rate = 16000;

  double volume() const { return lx * ly * lz; }
  double surface() const { return 2.0 * (lx * ly + lx * lz + ly * lz); }

  void validate() const {
    if (!(lx > 0.5) || !(ly > 0.5) || !(lz > 0.5))
      throw ConfigError("room dimensions must exceed 0.5 m");
    if (t60 < 0.0 || !std::isfinite(t60)) throw ConfigError("t60 must be >= 0");
    if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
  }

  bool contains(const Vec3& p, double margin) const {
    return p[0] >= margin && p[0] <= lx - margin && p[1] >= margin &&
           p[1] <= ly - margin && p[2] >= margin && p[2] <= lz - margin;
  }
};

// Absorption coefficient that realizes `t60` in this room under Eyring's
// model: t60 = 0.161 V / (-S ln(1 - alpha)).
inline double eyring_absorption(double volume, double surface, double t60) {
  if (!(t60 > 0.0)) return 1.0;
  const double a = 1.0 - std::exp(-0.161 * volume / (surface * t60));
  return std::min(a, 1.0 - 1e-12);
}

struct Rir {
  int sample_rate = 16000;
  std::vector<std::vector<double>> taps;  // [mic][tap]
  std::vector<size_t> direct_peak;        // index of the direct-path tap, per mic
};

namespace detail {

// Specular image sums in a shoebox do not decay at Eyring's average rate:
// a path in direction u crosses walls at rate v (|ux|/Lx + |uy|/Ly + |uz|/Lz),
// and grazing paths along the long axis outlive the average, stretching the
// measured reverberation time well past the request. Model the decay per
// direction -- the backward-integrated energy is sum_u exp(2 ln(b) v t g(u)) / g(u)
// -- and report the Schroeder T60 (-5 dB to -25 dB slope) it predicts.
inline double predicted_t60(const RoomSpec& room, double beta, double v) {
  const double lnb2 = 2.0 * std::log(beta);
  constexpr int kDirs = 256;
  double g[kDirs];
  for (int i = 0; i < kDirs; ++i) {
    // Fibonacci sphere; absolute values fold all octants together.
    const double z = (2.0 * i + 1.0) / kDirs - 1.0;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = static_cast<double>(i) * 2.399963229728653;
    g[i] = std::abs(r * std::cos(phi)) / room.lx + std::abs(r * std::sin(phi)) / room.ly +
           std::abs(z) / room.lz;
  }
  const auto decay_sum = [&](double t) {
    double s = 0.0;
    for (double gi : g) s += std::exp(lnb2 * v * t * gi) / gi;
    return s;
  };
  const double s0 = decay_sum(0.0);
  const auto crossing = [&](double drop_db) {
    const double want = std::pow(10.0, -drop_db / 10.0) * s0;
    double hi = 1e-3;
    while (decay_sum(hi) > want && hi < 1e9) hi *= 2.0;
    double lo = 0.0;
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (lo + hi);
      (decay_sum(mid) > want ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  };
  return 3.0 * (crossing(25.0) - crossing(5.0));
}

// Wall reflectivity whose predicted Schroeder T60 matches the request.
// Eyring's absorption is the right average-rate answer but runs long under
// the directional model above; solving against that model keeps the measured
// decay of the rendered response on target.
inline double calibrated_reflectivity(const RoomSpec& room, double v) {
  double lo = 1e-4, hi = 1.0 - 1e-9;
  if (predicted_t60(room, lo, v) >= room.t60) return lo;
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    (predicted_t60(room, mid, v) < room.t60 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Hann-windowed sinc (half-width 40 samples) at fractional delay `delay`.
// The window is centered on the true delay, not the nearest sample, so the
// pulse stays symmetric and the group delay exact.
inline void add_windowed_sinc(std::vector<double>* h, double delay, double amp) {
  constexpr double kHalf = 40.0;
  const long lo = std::max<long>(0, static_cast<long>(std::ceil(delay - kHalf)));
  const long hi = std::min<long>(static_cast<long>(h->size()) - 1,
                                 static_cast<long>(std::floor(delay + kHalf)));
  for (long n = lo; n <= hi; ++n) {
    const double x = static_cast<double>(n) - delay;
    const double s = x == 0.0 ? 1.0 : std::sin(kPi * x) / (kPi * x);
    const double w = 0.5 + 0.5 * std::cos(kPi * x / kHalf);
    (*h)[static_cast<size_t>(n)] += amp * s * w;
  }
}

}  // namespace detail

// Image-source simulation. Source and microphone positions are in room
// coordinates (one corner at the origin). The image set covers reflections
// arriving up to 1.2 * t60 after the direct sound.
inline Rir simulate_rir(const RoomSpec& room, const Vec3& source,
                        const std::vector<Vec3>& mics, double speed_of_sound = kSoundSpeed) {
  room.validate();
  if (mics.empty()) throw ConfigError("simulate_rir: no microphones");
  constexpr double kWallEps = 1e-3;
  if (!room.contains(source, kWallEps)) throw ConfigError("source outside the room");
  for (const Vec3& m : mics)
    if (!room.contains(m, kWallEps)) throw ConfigError("microphone outside the room");

  const double fs = room.sample_rate;
  const double v = speed_of_sound;
  double max_direct = 0.0;
  for (const Vec3& m : mics) max_direct = std::max(max_direct, norm(source - m));
  const double span = 1.2 * room.t60 + max_direct / v;
  const size_t ntaps = static_cast<size_t>(std::ceil(span * fs)) + 81;

  Rir out;
  out.sample_rate = room.sample_rate;
  out.taps.assign(mics.size(), std::vector<double>(ntaps, 0.0));
  out.direct_peak.assign(mics.size(), 0);

  // Direct path: fractional delay, free-field spreading 1/(4 pi d).
  for (size_t m = 0; m < mics.size(); ++m) {
    const double d = std::max(norm(source - mics[m]), 1e-3);
    const double delay = d * fs / v;
    detail::add_windowed_sinc(&out.taps[m], delay, 1.0 / (4.0 * kPi * d));
    out.direct_peak[m] = static_cast<size_t>(std::llround(delay));
  }

  if (room.t60 <= 0.0) return out;

  const double beta = detail::calibrated_reflectivity(room, v);
  const double reach = v * span;  // meters of path length we keep
  const double dims[3] = {room.lx, room.ly, room.lz};
  const double src[3] = {source[0], source[1], source[2]};
  const int nmax[3] = {static_cast<int>(std::ceil(reach / (2.0 * room.lx))) + 1,
                       static_cast<int>(std::ceil(reach / (2.0 * room.ly))) + 1,
                       static_cast<int>(std::ceil(reach / (2.0 * room.lz))) + 1};

  // Per-axis image coordinate, reflection count, and hash piece for lattice
  // index n and parity l: coordinate = (1 - 2l) s + 2 n L,
  // reflections = |n - l| + |n|.
  struct AxisImage {
    double coord;
    int refl;
    uint64_t hash;
  };
  std::vector<std::vector<AxisImage>> axis(3);
  for (int a = 0; a < 3; ++a) {
    for (int n = -nmax[a]; n <= nmax[a]; ++n) {
      for (int l = 0; l <= 1; ++l) {
        const double coord = (1 - 2 * l) * src[a] + 2.0 * n * dims[a];
        const int refl = std::abs(n - l) + std::abs(n);
        const uint64_t h = splitmix64(static_cast<uint64_t>(a + 1) * 0x100000001b3ULL +
                                      static_cast<uint64_t>(n) * 2 + static_cast<uint64_t>(l));
        axis[a].push_back({coord, refl, h});
      }
    }
  }

  for (const auto& ax : axis[0]) {
    for (const auto& ay : axis[1]) {
      const int rxy = ax.refl + ay.refl;
      const uint64_t hxy = ax.hash ^ (ay.hash * 3);
      for (const auto& az : axis[2]) {
        const int refl = rxy + az.refl;
        if (refl == 0) continue;  // direct path already placed
        // Same-sign pulses rounded onto a shared sample grid pile up
        // coherently and inflate the late tail; a deterministic per-image
        // sign keeps energies additive. The sign is a pure function of the
        // lattice index, identical for every mic, so spatial coherence and
        // seedless reproducibility are preserved.
        const uint64_t h = splitmix64(hxy ^ (az.hash * 5));
        const double mag = std::pow(beta, refl);
        const double gain_refl = (h >> 63) != 0 ? mag : -mag;
        for (size_t m = 0; m < mics.size(); ++m) {
          const double dx = ax.coord - mics[m][0];
          const double dy = ay.coord - mics[m][1];
          const double dz = az.coord - mics[m][2];
          const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
          if (d * fs / v >= static_cast<double>(ntaps - 1) || d > reach) continue;
          const size_t n = static_cast<size_t>(std::llround(d * fs / v));
          out.taps[m][n] += gain_refl / (4.0 * kPi * std::max(d, 1e-3));
        }
      }
    }
  }
  return out;
}

// Reverberation time from the Schroeder backward-integrated decay curve,
// extrapolating the -5 dB .. -25 dB slope to 60 dB.
inline double measure_t60(const std::vector<double>& h, int sample_rate) {
  double total = 0.0;
  for (double x : h) total += x * x;
  if (!(total > 0.0)) throw DataError("measure_t60: silent impulse response");
  double tail = total;
  size_t n5 = h.size(), n25 = h.size();
  for (size_t n = 0; n < h.size(); ++n) {
    const double db = 10.0 * std::log10(std::max(tail / total, 1e-300));
    if (n5 == h.size() && db <= -5.0) n5 = n;
    if (n25 == h.size() && db <= -25.0) {
      n25 = n;
      break;
    }
    tail -= h[n] * h[n];
  }
  if (n25 == h.size() || n25 <= n5)
    throw DataError("measure_t60: decay range not covered by the response");
  return 3.0 * static_cast<double>(n25 - n5) / sample_rate;
}

struct RirSplit {
  std::vector<std::vector<double>> early;  // direct + reflections in the window
  std::vector<std::vector<double>> late;   // everything else
};

// Exact partition of each channel around its direct-path peak:
// [peak - pre_ms, peak + post_ms] goes to `early`, the rest to `late`.
inline RirSplit split_direct_early(const Rir& rir, double pre_ms = 6.0, double post_ms = 50.0) {
  if (pre_ms < 0 || post_ms < 0) throw ConfigError("split window must be non-negative");
  RirSplit out;
  out.early = rir.taps;
  out.late = rir.taps;
  const double fs = rir.sample_rate;
  for (size_t m = 0; m < rir.taps.size(); ++m) {
    const long peak = static_cast<long>(rir.direct_peak[m]);
    const long lo = std::max<long>(0, peak - static_cast<long>(std::llround(pre_ms * fs / 1e3)));
    const long hi = std::min<long>(static_cast<long>(rir.taps[m].size()) - 1,
                                   peak + static_cast<long>(std::llround(post_ms * fs / 1e3)));
    for (long n = 0; n < static_cast<long>(rir.taps[m].size()); ++n) {
      if (n >= lo && n <= hi)
        out.late[static_cast<size_t>(m)][static_cast<size_t>(n)] = 0.0;
      else
        out.early[static_cast<size_t>(m)][static_cast<size_t>(n)] = 0.0;
    }
  }
  return out;
}

}  // namespace rse

#endif  // RSE_RIR_HPP_
