// Copyright 2026 The RSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Classical beamforming baselines: delay-and-sum plus oracle MVDR variants
// driven by ideal ratio masks or the ground-truth target spectrogram.

#ifndef RSE_BASELINES_HPP_
#define RSE_BASELINES_HPP_

#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "rse/geometry.hpp"
#include "rse/spatial.hpp"
#include "rse/stft.hpp"
#include "rse/tensor.hpp"
#include "rse/util.hpp"

namespace rse {

// Far-field steering vector: per-mic phase of a plane wave arriving from
// (az, el). Matches the sign convention of the simulator, where a mic closer
// to the source receives the wavefront earlier.
inline std::vector<cplx> steering_vector(const MicArray& array, double az_deg,
                                         double el_deg, double f_hz) {
  const Vec3 u = unit_direction(az_deg, el_deg);
  std::vector<cplx> d(array.num_mics());
  for (size_t m = 0; m < d.size(); ++m) {
    const double phase = 2.0 * kPi * f_hz * dot(array.positions[m], u) / kSoundSpeed;
    d[m] = cplx(std::cos(phase), std::sin(phase));
  }
  return d;
}

// Phase-align every channel toward the steering direction and average. A
// plane wave from exactly that direction passes with unit gain.
inline Spectrogram das_beamform(const Spectrogram& spec, const MicArray& array,
                                double az_deg, double el_deg) {
  const size_t mics = spec.channels;
  if (mics != array.num_mics())
    throw DataError("das_beamform: channel count does not match the array");
  Spectrogram out(spec.cfg, 1, spec.frames, spec.num_samples);
  for (size_t f = 0; f < spec.bins; ++f) {
    const auto d = steering_vector(array, az_deg, el_deg, spec.cfg.bin_hz(f));
    for (size_t t = 0; t < spec.frames; ++t) {
      cplx acc(0.0, 0.0);
      for (size_t m = 0; m < mics; ++m) acc += spec.at(m, t, f) * std::conj(d[m]);
      out.at(0, t, f) = acc / static_cast<double>(mics);
    }
  }
  return out;
}

namespace detail {

// Principal eigenvector of a Hermitian PSD matrix by power iteration,
// seeded with the column of the largest diagonal entry (exact for the
// rank-one covariances oracle scenes produce). Returns zeros for a zero
// matrix.
inline std::vector<cplx> principal_eigvec(const std::vector<cplx>& r, size_t m) {
  size_t j0 = 0;
  double best = -1.0;
  for (size_t j = 0; j < m; ++j)
    if (r[j * m + j].real() > best) {
      best = r[j * m + j].real();
      j0 = j;
    }
  std::vector<cplx> x(m);
  for (size_t i = 0; i < m; ++i) x[i] = r[i * m + j0];
  for (int it = 0; it < 40; ++it) {
    double n2 = 0.0;
    for (const cplx& v : x) n2 += std::norm(v);
    if (n2 <= 0.0) return std::vector<cplx>(m, cplx(0.0, 0.0));
    const double inv = 1.0 / std::sqrt(n2);
    for (cplx& v : x) v *= inv;
    std::vector<cplx> y(m, cplx(0.0, 0.0));
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < m; ++j) y[i] += r[i * m + j] * x[j];
    x = std::move(y);
  }
  return x;
}

// Gaussian elimination with partial pivoting on a dense complex system.
inline std::vector<cplx> solve_linear(std::vector<cplx> a, std::vector<cplx> b,
                                      size_t m, size_t bin) {
  for (size_t k = 0; k < m; ++k) {
    size_t piv = k;
    double best = std::abs(a[k * m + k]);
    for (size_t r = k + 1; r < m; ++r)
      if (std::abs(a[r * m + k]) > best) {
        best = std::abs(a[r * m + k]);
        piv = r;
      }
    if (!(best > 0.0))
      throw NumericError("mvdr: singular noise covariance at bin " +
                         std::to_string(bin));
    if (piv != k) {
      for (size_t c = 0; c < m; ++c) std::swap(a[k * m + c], a[piv * m + c]);
      std::swap(b[k], b[piv]);
    }
    for (size_t r = k + 1; r < m; ++r) {
      const cplx f = a[r * m + k] / a[k * m + k];
      a[r * m + k] = 0.0;
      for (size_t c = k + 1; c < m; ++c) a[r * m + c] -= f * a[k * m + c];
      b[r] -= f * b[k];
    }
  }
  std::vector<cplx> x(m);
  for (size_t k = m; k-- > 0;) {
    cplx acc = b[k];
    for (size_t c = k + 1; c < m; ++c) acc -= a[k * m + c] * x[c];
    x[k] = acc / a[k * m + k];
  }
  return x;
}

}  // namespace detail

// Per-frequency MVDR solution w = Rn^-1 d / (d^H Rn^-1 d): steering d is the
// principal eigenvector of the target covariance, normalized to its
// reference-channel component so the output reproduces the target as observed
// at the reference mic. Diagonal loading 1e-6 * trace / M stabilizes the
// inverse; a noise covariance with zero trace (noise-free oracle) falls back
// to target-scaled loading, which reduces to a matched filter. Bins with no
// target energy come back inactive and synthesize silence.
struct MvdrWeights {
  std::vector<cplx> w, d;
  bool active = false;
};

inline MvdrWeights mvdr_weight(const std::vector<cplx>& rs, std::vector<cplx> rn,
                               size_t m, size_t ref, size_t bin = 0) {
  MvdrWeights out;
  out.w.assign(m, cplx(0.0, 0.0));
  out.d.assign(m, cplx(0.0, 0.0));
  double ts = 0.0, tn = 0.0;
  for (size_t i = 0; i < m; ++i) {
    ts += rs[i * m + i].real();
    tn += rn[i * m + i].real();
  }
  if (!(ts > 0.0)) return out;
  const double load = 1e-6 * (tn > 0.0 ? tn : ts) / static_cast<double>(m);
  for (size_t i = 0; i < m; ++i) rn[i * m + i] += load;
  std::vector<cplx> d = detail::principal_eigvec(rs, m);
  double dn = 0.0;
  for (const cplx& v : d) dn += std::norm(v);
  if (!(dn > 0.0) || std::abs(d[ref]) < 1e-9 * std::sqrt(dn)) return out;
  const cplx dref = d[ref];
  for (cplx& v : d) v /= dref;
  d[ref] = cplx(1.0, 0.0);
  const std::vector<cplx> x = detail::solve_linear(rn, d, m, bin);
  cplx denom(0.0, 0.0);
  for (size_t i = 0; i < m; ++i) denom += std::conj(d[i]) * x[i];
  if (!(std::abs(denom) > 0.0)) return out;
  for (size_t i = 0; i < m; ++i) out.w[i] = x[i] / denom;
  out.d = std::move(d);
  out.active = true;
  return out;
}

// Ideal ratio mask |S| / (|S| + |N|) at the reference channel.
inline Tensor ideal_ratio_mask(const Spectrogram& target, const Spectrogram& noise,
                               size_t ref = 0) {
  if (target.frames != noise.frames || target.bins != noise.bins)
    throw DataError("ideal_ratio_mask: target/noise grids differ");
  Tensor m(target.frames, target.bins);
  for (size_t t = 0; t < target.frames; ++t)
    for (size_t f = 0; f < target.bins; ++f) {
      const double s = std::abs(target.at(ref, t, f));
      const double n = std::abs(noise.at(ref, t, f));
      m.at(t, f) = s / std::max(s + n, kMagFloor);
    }
  return m;
}

namespace detail {

template <typename CovFn>
Spectrogram mvdr_apply(const Spectrogram& mix, size_t ref, CovFn&& accumulate) {
  const size_t mics = mix.channels;
  Spectrogram out(mix.cfg, 1, mix.frames, mix.num_samples);
  std::vector<cplx> rs(mics * mics), rn(mics * mics), y(mics);
  for (size_t f = 0; f < mix.bins; ++f) {
    std::fill(rs.begin(), rs.end(), cplx(0.0, 0.0));
    std::fill(rn.begin(), rn.end(), cplx(0.0, 0.0));
    accumulate(f, rs, rn);
    const MvdrWeights wt = mvdr_weight(rs, rn, mics, ref, f);
    for (size_t t = 0; t < mix.frames; ++t) {
      cplx acc(0.0, 0.0);
      if (wt.active)
        for (size_t m = 0; m < mics; ++m)
          acc += std::conj(wt.w[m]) * mix.at(m, t, f);
      out.at(0, t, f) = acc;
    }
  }
  return out;
}

}  // namespace detail

// Oracle MVDR from an ideal ratio mask: target/noise covariances are
// mask-weighted outer products of the mixture.
inline Spectrogram irm_mvdr(const Spectrogram& mix, const Tensor& irm,
                            size_t ref = 0) {
  if (irm.rows() != mix.frames || irm.cols() != mix.bins)
    throw DataError("irm_mvdr: mask does not match the spectrogram grid");
  if (ref >= mix.channels) throw ConfigError("irm_mvdr: bad reference channel");
  const size_t mics = mix.channels;
  return detail::mvdr_apply(mix, ref, [&](size_t f, std::vector<cplx>& rs,
                                          std::vector<cplx>& rn) {
    for (size_t t = 0; t < mix.frames; ++t) {
      const double ms = irm.at(t, f);
      for (size_t i = 0; i < mics; ++i)
        for (size_t j = 0; j < mics; ++j) {
          const cplx o = mix.at(i, t, f) * std::conj(mix.at(j, t, f));
          rs[i * mics + j] += ms * o;
          rn[i * mics + j] += (1.0 - ms) * o;
        }
    }
  });
}

// Oracle MVDR from the ground-truth multichannel target: direct outer
// products of the target and of the residual (mixture - target).
inline Spectrogram csm_mvdr(const Spectrogram& mix, const Spectrogram& target,
                            size_t ref = 0) {
  if (target.channels != mix.channels || target.frames != mix.frames ||
      target.bins != mix.bins)
    throw DataError("csm_mvdr: target does not match the mixture grid");
  if (ref >= mix.channels) throw ConfigError("csm_mvdr: bad reference channel");
  const size_t mics = mix.channels;
  std::vector<cplx> s(mics), n(mics);
  return detail::mvdr_apply(mix, ref, [&](size_t f, std::vector<cplx>& rs,
                                          std::vector<cplx>& rn) {
    for (size_t t = 0; t < mix.frames; ++t) {
      for (size_t i = 0; i < mics; ++i) {
        s[i] = target.at(i, t, f);
        n[i] = mix.at(i, t, f) - s[i];
      }
      for (size_t i = 0; i < mics; ++i)
        for (size_t j = 0; j < mics; ++j) {
          rs[i * mics + j] += s[i] * std::conj(s[j]);
          rn[i * mics + j] += n[i] * std::conj(n[j]);
        }
    }
  });
}

}  // namespace rse

#endif  // RSE_BASELINES_HPP_
