// Copyright 2026 The RSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Subband layouts over rFFT bins. Boundaries come from cumulative bandwidth
// targets rounded to the nearest bin; the final band absorbs the remainder
// including the Nyquist bin. Bands tile [0, F) contiguously with no overlap.

#ifndef RSE_BANDS_HPP_
#define RSE_BANDS_HPP_

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "rse/stft.hpp"
#include "rse/util.hpp"

namespace rse {

struct BandLayout {
  std::vector<std::pair<size_t, size_t>> ranges;  // [begin, end) bin indices
  std::string scheme = "custom";

  size_t num_bands() const { return ranges.size(); }
  size_t width(size_t k) const { return ranges[k].second - ranges[k].first; }
  size_t total_bins() const { return ranges.empty() ? 0 : ranges.back().second; }

  void validate(size_t num_bins) const {
    if (ranges.empty()) throw ConfigError("BandLayout: no bands");
    size_t prev = 0;
    for (const auto& [b, e] : ranges) {
      if (b != prev || e <= b) throw ConfigError("BandLayout: bands must tile [0, F)");
      prev = e;
    }
    if (prev != num_bins) throw ConfigError("BandLayout: does not cover all bins");
  }
};

namespace detail {

inline BandLayout layout_from_widths_hz(const std::vector<double>& widths_hz,
                                        const StftConfig& cfg) {
  const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.fft_size;
  const size_t num_bins = cfg.num_bins();
  BandLayout layout;
  double cum = 0.0;
  size_t prev = 0;
  for (size_t i = 0; i < widths_hz.size(); ++i) {
    cum += widths_hz[i];
    size_t edge = i + 1 == widths_hz.size()
                      ? num_bins
                      : static_cast<size_t>(std::lround(cum / bin_hz));
    if (edge > num_bins) edge = num_bins;
    if (edge <= prev)
      throw ConfigError("BandLayout: band narrower than one bin at index " +
                        std::to_string(i));
    layout.ranges.emplace_back(prev, edge);
    prev = edge;
  }
  layout.validate(num_bins);
  return layout;
}

}  // namespace detail

// K equal-width bands; the last absorbs the remainder.
inline BandLayout equal_band_layout(size_t k, const StftConfig& cfg) {
  const size_t num_bins = cfg.num_bins();
  if (k == 0 || k > num_bins) throw ConfigError("BandLayout: bad band count");
  BandLayout layout;
  layout.scheme = "equal" + std::to_string(k);
  const size_t w = num_bins / k;
  size_t prev = 0;
  for (size_t i = 0; i < k; ++i) {
    const size_t edge = i + 1 == k ? num_bins : prev + w;
    layout.ranges.emplace_back(prev, edge);
    prev = edge;
  }
  layout.validate(num_bins);
  return layout;
}

// bs1: ten 100 Hz + twelve 200 Hz + eight 500 Hz + remainder (31 bands at
// 16 kHz / 512 fft). bs2: five 200 Hz + six 500 Hz + four 1 kHz (15 bands).
// fullband: a single band.
inline BandLayout build_band_layout(const std::string& scheme, const StftConfig& cfg) {
  std::vector<double> widths;
  if (scheme == "bs1") {
    widths.insert(widths.end(), 10, 100.0);
    widths.insert(widths.end(), 12, 200.0);
    widths.insert(widths.end(), 8, 500.0);
    widths.push_back(600.0);  // remainder up to Nyquist
  } else if (scheme == "bs2") {
    widths.insert(widths.end(), 5, 200.0);
    widths.insert(widths.end(), 6, 500.0);
    widths.insert(widths.end(), 4, 1000.0);
  } else if (scheme == "fullband") {
    widths.push_back(cfg.sample_rate / 2.0);
  } else if (scheme.rfind("equal", 0) == 0) {
    return equal_band_layout(std::stoul(scheme.substr(5)), cfg);
  } else {
    throw ConfigError("unknown band scheme: " + scheme);
  }
  auto layout = detail::layout_from_widths_hz(widths, cfg);
  layout.scheme = scheme;
  return layout;
}

}  // namespace rse

#endif  // RSE_BANDS_HPP_
