// Copyright 2026 The RSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Iterative radix-2 FFT plus real-signal wrappers. Sizes are powers of two;
// that covers the 512-point analysis here and the zero-padded convolutions.

#ifndef RSE_FFT_HPP_
#define RSE_FFT_HPP_

#include <complex>
#include <vector>

#include "rse/util.hpp"

namespace rse {

using cplx = std::complex<double>;

inline bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place Cooley-Tukey. inverse=true includes the 1/N scale.
inline void fft_inplace(std::vector<cplx>& a, bool inverse) {
  const size_t n = a.size();
  if (!is_pow2(n)) throw NumericError("fft: size must be a power of two");
  // bit-reversal permutation
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * kPi / static_cast<double>(len);
    const cplx wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const cplx u = a[i + k];
        const cplx t = a[i + k + len / 2] * w;
        a[i + k] = u + t;
        a[i + k + len / 2] = u - t;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (cplx& x : a) x *= inv;
  }
}

inline std::vector<cplx> fft(std::vector<cplx> a) {
  fft_inplace(a, false);
  return a;
}

inline std::vector<cplx> ifft(std::vector<cplx> a) {
  fft_inplace(a, true);
  return a;
}

// Real-input FFT: returns n/2+1 non-negative-frequency bins.
inline std::vector<cplx> rfft(const std::vector<double>& x, size_t n) {
  if (x.size() > n) throw NumericError("rfft: input longer than transform");
  std::vector<cplx> a(n);
  for (size_t i = 0; i < x.size(); ++i) a[i] = cplx(x[i], 0.0);
  fft_inplace(a, false);
  a.resize(n / 2 + 1);
  return a;
}

// Inverse of rfft for a real signal of length n.
inline std::vector<double> irfft(const std::vector<cplx>& bins, size_t n) {
  if (bins.size() != n / 2 + 1) throw NumericError("irfft: bin count mismatch");
  std::vector<cplx> a(n);
  for (size_t k = 0; k <= n / 2; ++k) a[k] = bins[k];
  for (size_t k = n / 2 + 1; k < n; ++k) a[k] = std::conj(bins[n - k]);
  fft_inplace(a, true);
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = a[i].real();
  return out;
}

// Full linear convolution via zero-padded FFT.
inline std::vector<double> fft_convolve(const std::vector<double>& a,
                                        const std::vector<double>& b) {
  if (a.empty() || b.empty()) return {};
  const size_t lout = a.size() + b.size() - 1;
  const size_t n = next_pow2(lout);
  std::vector<cplx> fa(n), fb(n);
  for (size_t i = 0; i < a.size(); ++i) fa[i] = cplx(a[i], 0.0);
  for (size_t i = 0; i < b.size(); ++i) fb[i] = cplx(b[i], 0.0);
  fft_inplace(fa, false);
  fft_inplace(fb, false);
  for (size_t i = 0; i < n; ++i) fa[i] *= fb[i];
  fft_inplace(fa, true);
  std::vector<double> out(lout);
  for (size_t i = 0; i < lout; ++i) out[i] = fa[i].real();
  return out;
}

}  // namespace rse

#endif  // RSE_FFT_HPP_
