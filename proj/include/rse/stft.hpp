// Copyright 2026 The RSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// STFT analysis/synthesis with a periodic Hann window, reflect padding of
// half a window on both ends, and synthesis by windowed overlap-add divided
// by the accumulated squared window. With hop | window_len and >= 50%
// overlap this inverts the analysis exactly on the original sample range.

#ifndef RSE_STFT_HPP_
#define RSE_STFT_HPP_

#include <complex>
#include <vector>

#include "rse/fft.hpp"
#include "rse/util.hpp"

namespace rse {

struct StftConfig {
  int sample_rate = 16000;
  size_t window_len = 512;
  size_t hop = 128;
  size_t fft_size = 512;

  void validate() const {
    if (!is_pow2(fft_size)) throw ConfigError("stft: fft_size must be a power of two");
    if (window_len > fft_size) throw ConfigError("stft: window_len > fft_size");
    if (hop == 0 || window_len % hop != 0)
      throw ConfigError("stft: hop must divide window_len");
    if (hop > window_len / 2) throw ConfigError("stft: overlap below 50%");
    if (sample_rate <= 0) throw ConfigError("stft: bad sample rate");
  }

  size_t num_bins() const { return fft_size / 2 + 1; }
  size_t pad() const { return window_len / 2; }
  size_t num_frames(size_t num_samples) const { return num_samples / hop + 1; }
  double bin_hz(size_t f) const {
    return static_cast<double>(f) * sample_rate / static_cast<double>(fft_size);
  }

  bool operator==(const StftConfig& o) const {
    return sample_rate == o.sample_rate && window_len == o.window_len &&
           hop == o.hop && fft_size == o.fft_size;
  }
};

inline std::vector<double> hann_window(size_t n) {
  std::vector<double> w(n);
  for (size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

// Multichannel complex spectrogram, [channel][frame][bin].
struct Spectrogram {
  StftConfig cfg;
  size_t channels = 0;
  size_t frames = 0;
  size_t bins = 0;
  size_t num_samples = 0;  // original waveform length, for inversion
  std::vector<cplx> data;

  Spectrogram() = default;
  Spectrogram(const StftConfig& c, size_t m, size_t t, size_t orig_len)
      : cfg(c), channels(m), frames(t), bins(c.num_bins()), num_samples(orig_len),
        data(m * t * c.num_bins()) {}

  cplx& at(size_t m, size_t t, size_t f) { return data[(m * frames + t) * bins + f]; }
  cplx at(size_t m, size_t t, size_t f) const { return data[(m * frames + t) * bins + f]; }
};

namespace detail {

// Reflect padding without repeating the edge sample.
inline std::vector<double> reflect_pad(const std::vector<double>& x, size_t p) {
  if (x.size() <= p) throw DataError("stft: signal shorter than half a window");
  std::vector<double> out(x.size() + 2 * p);
  for (size_t i = 0; i < p; ++i) out[i] = x[p - i];
  for (size_t i = 0; i < x.size(); ++i) out[p + i] = x[i];
  const size_t n = x.size();
  for (size_t i = 0; i < p; ++i) out[p + n + i] = x[n - 2 - i];
  return out;
}

}  // namespace detail

inline Spectrogram stft(const std::vector<std::vector<double>>& x, const StftConfig& cfg) {
  cfg.validate();
  if (x.empty()) throw DataError("stft: no channels");
  const size_t len = x[0].size();
  if (len < cfg.window_len) throw DataError("stft: signal shorter than window");
  for (const auto& ch : x)
    if (ch.size() != len) throw DataError("stft: channel length mismatch");

  const size_t frames = cfg.num_frames(len);
  const auto win = hann_window(cfg.window_len);
  Spectrogram spec(cfg, x.size(), frames, len);
  std::vector<double> seg(cfg.fft_size, 0.0);
  for (size_t m = 0; m < x.size(); ++m) {
    const auto padded = detail::reflect_pad(x[m], cfg.pad());
    for (size_t t = 0; t < frames; ++t) {
      const size_t s = t * cfg.hop;
      for (size_t n = 0; n < cfg.window_len; ++n) seg[n] = padded[s + n] * win[n];
      for (size_t n = cfg.window_len; n < cfg.fft_size; ++n) seg[n] = 0.0;
      const auto bins = rfft(seg, cfg.fft_size);
      for (size_t f = 0; f < spec.bins; ++f) spec.at(m, t, f) = bins[f];
    }
  }
  return spec;
}

inline Spectrogram stft(const std::vector<double>& x, const StftConfig& cfg) {
  return stft(std::vector<std::vector<double>>{x}, cfg);
}

// Accumulated squared synthesis window over the padded sample range.
inline std::vector<double> ola_denominator(const StftConfig& cfg, size_t frames,
                                           size_t padded_len) {
  const auto win = hann_window(cfg.window_len);
  std::vector<double> den(padded_len, 0.0);
  for (size_t t = 0; t < frames; ++t) {
    const size_t s = t * cfg.hop;
    for (size_t n = 0; n < cfg.window_len && s + n < padded_len; ++n)
      den[s + n] += win[n] * win[n];
  }
  return den;
}

// Overlap-add of per-frame time signals (post inverse FFT), normalized by the
// squared-window sum, trimmed back to the original sample range.
inline std::vector<double> istft_ola(const std::vector<std::vector<double>>& frames_time,
                                     const StftConfig& cfg, size_t orig_len) {
  const size_t p = cfg.pad();
  const size_t padded_len = orig_len + 2 * p;
  const auto win = hann_window(cfg.window_len);
  const auto den = ola_denominator(cfg, frames_time.size(), padded_len);
  std::vector<double> num(padded_len, 0.0);
  for (size_t t = 0; t < frames_time.size(); ++t) {
    const size_t s = t * cfg.hop;
    for (size_t n = 0; n < cfg.window_len && s + n < padded_len; ++n)
      num[s + n] += win[n] * frames_time[t][n];
  }
  std::vector<double> out(orig_len, 0.0);
  for (size_t j = 0; j < orig_len; ++j) {
    const double d = den[p + j];
    out[j] = d > 1e-12 ? num[p + j] / d : 0.0;
  }
  return out;
}

// Adjoint of istft_ola as a linear map from output samples back to per-frame
// time signals. Needed for exact gradients through synthesis.
inline std::vector<std::vector<double>> istft_ola_adjoint(const std::vector<double>& grad_out,
                                                          const StftConfig& cfg,
                                                          size_t frames) {
  const size_t p = cfg.pad();
  const size_t orig_len = grad_out.size();
  const size_t padded_len = orig_len + 2 * p;
  const auto win = hann_window(cfg.window_len);
  const auto den = ola_denominator(cfg, frames, padded_len);
  std::vector<double> gpad(padded_len, 0.0);
  for (size_t j = 0; j < orig_len; ++j) {
    const double d = den[p + j];
    gpad[p + j] = d > 1e-12 ? grad_out[j] / d : 0.0;
  }
  std::vector<std::vector<double>> gframes(frames, std::vector<double>(cfg.window_len, 0.0));
  for (size_t t = 0; t < frames; ++t) {
    const size_t s = t * cfg.hop;
    for (size_t n = 0; n < cfg.window_len && s + n < padded_len; ++n)
      gframes[t][n] = win[n] * gpad[s + n];
  }
  return gframes;
}

inline std::vector<std::vector<double>> istft(const Spectrogram& spec) {
  spec.cfg.validate();
  std::vector<std::vector<double>> out(spec.channels);
  std::vector<cplx> bins(spec.bins);
  for (size_t m = 0; m < spec.channels; ++m) {
    std::vector<std::vector<double>> frames_time(spec.frames);
    for (size_t t = 0; t < spec.frames; ++t) {
      for (size_t f = 0; f < spec.bins; ++f) bins[f] = spec.at(m, t, f);
      auto seg = irfft(bins, spec.cfg.fft_size);
      seg.resize(spec.cfg.window_len);
      frames_time[t] = std::move(seg);
    }
    out[m] = istft_ola(frames_time, spec.cfg, spec.num_samples);
  }
  return out;
}

inline std::vector<double> istft_single(const Spectrogram& spec, size_t channel) {
  Spectrogram one(spec.cfg, 1, spec.frames, spec.num_samples);
  for (size_t t = 0; t < spec.frames; ++t)
    for (size_t f = 0; f < spec.bins; ++f) one.at(0, t, f) = spec.at(channel, t, f);
  return istft(one)[0];
}

}  // namespace rse

#endif  // RSE_STFT_HPP_
