// Copyright 2026 The RSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Pairwise spatial features and the steered direction feature: the average
// over mic pairs of cos(IPD - TPD), which peaks when the hypothesized
// direction matches the observed inter-channel phase.

#ifndef RSE_SPATIAL_HPP_
#define RSE_SPATIAL_HPP_

#include <complex>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rse/geometry.hpp"
#include "rse/stft.hpp"
#include "rse/tensor.hpp"
#include "rse/util.hpp"

namespace rse {

constexpr double kMagFloor = 1e-8;

// Phase difference (radians) expected at a pair for a wave from (az, el) at
// frequency f_hz. Delay in samples is tdoa_distance * fs / v; the phase of a
// bin at f_hz advances by 2*pi*f_hz/fs per sample.
inline double tpd(const MicPair& pair, double az_deg, double el_deg, double f_hz,
                  double fs, double v = kSoundSpeed) {
  const double delay_samples = tdoa_distance(pair, az_deg, el_deg) * fs / v;
  return 2.0 * kPi * (f_hz / fs) * delay_samples;
}

// Per-pair phase and level differences, shape [pair][frame][bin] each.
struct FeaturePack {
  std::vector<MicPair> pairs;
  size_t frames = 0, bins = 0;
  std::vector<double> ipd;  // radians, unwrapped only per-bin (principal value)
  std::vector<double> ild;  // dB

  size_t idx(size_t p, size_t t, size_t f) const { return (p * frames + t) * bins + f; }
  double ipd_at(size_t p, size_t t, size_t f) const { return ipd[idx(p, t, f)]; }
  double ild_at(size_t p, size_t t, size_t f) const { return ild[idx(p, t, f)]; }
};

inline FeaturePack compute_features(const Spectrogram& spec,
                                    const std::vector<MicPair>& pairs) {
  for (const auto& p : pairs)
    if (p.p1 >= spec.channels || p.p2 >= spec.channels)
      throw ConfigError("compute_features: pair index out of range");
  FeaturePack pack;
  pack.pairs = pairs;
  pack.frames = spec.frames;
  pack.bins = spec.bins;
  pack.ipd.resize(pairs.size() * spec.frames * spec.bins);
  pack.ild.resize(pack.ipd.size());
  for (size_t p = 0; p < pairs.size(); ++p) {
    const size_t m1 = pairs[p].p1, m2 = pairs[p].p2;
    for (size_t t = 0; t < spec.frames; ++t)
      for (size_t f = 0; f < spec.bins; ++f) {
        const cplx y1 = spec.at(m1, t, f);
        const cplx y2 = spec.at(m2, t, f);
        const size_t i = pack.idx(p, t, f);
        pack.ipd[i] = std::arg(y1) - std::arg(y2);
        const double a1 = std::max(std::abs(y1), kMagFloor);
        const double a2 = std::max(std::abs(y2), kMagFloor);
        pack.ild[i] = 20.0 * std::log10(a1 / a2);
      }
  }
  return pack;
}

struct DirectionFeatureOptions {
  double v = kSoundSpeed;
  // Divide by the number of pairs so values land in [-1, 1].
  bool normalize = false;
};

// V(theta, phi) as [frame][bin]. Uses cos(IPD)cos(TPD) + sin(IPD)sin(TPD),
// identical to the inner product of the unit phasors.
inline Tensor direction_feature(const FeaturePack& pack, const StftConfig& cfg,
                                double az_deg, double el_deg,
                                const DirectionFeatureOptions& opt = {}) {
  if (pack.pairs.empty()) throw ConfigError("direction_feature: no pairs");
  Tensor out(pack.frames, pack.bins);
  std::vector<double> ctpd(pack.bins), stpd(pack.bins);
  for (size_t p = 0; p < pack.pairs.size(); ++p) {
    for (size_t f = 0; f < pack.bins; ++f) {
      const double phi = tpd(pack.pairs[p], az_deg, el_deg, cfg.bin_hz(f),
                             cfg.sample_rate, opt.v);
      ctpd[f] = std::cos(phi);
      stpd[f] = std::sin(phi);
    }
    for (size_t t = 0; t < pack.frames; ++t) {
      const double* ipd_row = pack.ipd.data() + pack.idx(p, t, 0);
      double* out_row = out.v.data() + t * pack.bins;
      for (size_t f = 0; f < pack.bins; ++f)
        out_row[f] += std::cos(ipd_row[f]) * ctpd[f] + std::sin(ipd_row[f]) * stpd[f];
    }
  }
  if (opt.normalize) {
    const double inv = 1.0 / static_cast<double>(pack.pairs.size());
    for (double& x : out.v) x *= inv;
  }
  return out;
}

inline Tensor direction_feature(const Spectrogram& spec,
                                const std::vector<MicPair>& pairs, double az_deg,
                                double el_deg, const DirectionFeatureOptions& opt = {}) {
  return direction_feature(compute_features(spec, pairs), spec.cfg, az_deg, el_deg, opt);
}

// Precomputed time-summed IPD phasors: evaluates the time-frequency average
// of V(theta, phi) for many candidate directions cheaply. Used by grid scans.
class DirectionScanner {
 public:
  DirectionScanner(const FeaturePack& pack, const StftConfig& cfg)
      : pairs_(pack.pairs), cfg_(cfg), bins_(pack.bins),
        frames_(static_cast<double>(pack.frames)) {
    csum_.assign(pairs_.size() * bins_, 0.0);
    ssum_.assign(pairs_.size() * bins_, 0.0);
    for (size_t p = 0; p < pairs_.size(); ++p)
      for (size_t t = 0; t < pack.frames; ++t)
        for (size_t f = 0; f < bins_; ++f) {
          const double ipd = pack.ipd_at(p, t, f);
          csum_[p * bins_ + f] += std::cos(ipd);
          ssum_[p * bins_ + f] += std::sin(ipd);
        }
  }

  // Mean over frames and bins of the (unnormalized) direction feature.
  double averaged(double az_deg, double el_deg, double v = kSoundSpeed) const {
    double acc = 0.0;
    for (size_t p = 0; p < pairs_.size(); ++p)
      for (size_t f = 0; f < bins_; ++f) {
        const double phi = tpd(pairs_[p], az_deg, el_deg, cfg_.bin_hz(f),
                               cfg_.sample_rate, v);
        acc += std::cos(phi) * csum_[p * bins_ + f] + std::sin(phi) * ssum_[p * bins_ + f];
      }
    return acc / (frames_ * static_cast<double>(bins_));
  }

 private:
  std::vector<MicPair> pairs_;
  StftConfig cfg_;
  size_t bins_;
  double frames_;
  std::vector<double> csum_, ssum_;
};

namespace detail {

inline void write_f64_atomic(const std::string& path, const std::vector<double>& v) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write: " + tmp);
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!f) throw DataError("short write: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw DataError("cannot rename into place: " + path);
}

}  // namespace detail

// Raw little-endian f64 arrays plus a JSON sidecar describing shapes, pair
// list, and analysis settings.
inline void dump_features(const FeaturePack& pack, const StftConfig& cfg,
                          const std::string& prefix) {
  detail::write_f64_atomic(prefix + ".ipd.f64", pack.ipd);
  detail::write_f64_atomic(prefix + ".ild.f64", pack.ild);
  nlohmann::json j;
  j["layout"] = "[pair][frame][bin] row-major float64";
  j["pairs"] = nlohmann::json::array();
  for (const auto& p : pack.pairs) j["pairs"].push_back({p.p1, p.p2});
  j["num_pairs"] = pack.pairs.size();
  j["frames"] = pack.frames;
  j["bins"] = pack.bins;
  j["ipd_file"] = prefix + ".ipd.f64";
  j["ild_file"] = prefix + ".ild.f64";
  j["ipd_unit"] = "radians";
  j["ild_unit"] = "dB";
  j["stft"] = {{"sample_rate", cfg.sample_rate},
               {"window_len", cfg.window_len},
               {"hop", cfg.hop},
               {"fft_size", cfg.fft_size}};
  const std::string tmp = prefix + ".json.tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw DataError("cannot write: " + tmp);
    f << j.dump(2) << "\n";
  }
  if (std::rename(tmp.c_str(), (prefix + ".json").c_str()) != 0)
    throw DataError("cannot rename into place: " + prefix + ".json");
}

}  // namespace rse

#endif  // RSE_SPATIAL_HPP_
