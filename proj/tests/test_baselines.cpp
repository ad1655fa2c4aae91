// Copyright 2026 The RSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "rse/baselines.hpp"
#include "rse/metrics.hpp"
#include "rse/stft.hpp"
#include "testutil.hpp"

using namespace rse;
using rse::test::random_signal;

namespace {

// Plane wave in the STFT model: every channel is the base spectrogram times
// its steering phase. Exactly rank one per bin.
Spectrogram steered_spec(const Spectrogram& base, const MicArray& arr,
                         double az, double el) {
  Spectrogram out(base.cfg, arr.num_mics(), base.frames, base.num_samples);
  for (size_t f = 0; f < base.bins; ++f) {
    const auto d = steering_vector(arr, az, el, base.cfg.bin_hz(f));
    for (size_t t = 0; t < base.frames; ++t)
      for (size_t m = 0; m < arr.num_mics(); ++m)
        out.at(m, t, f) = d[m] * base.at(0, t, f);
  }
  return out;
}

// Time-domain plane wave: per-mic fractional delay applied as a circular
// spectral phase shift (signal length must be a power of two).
std::vector<std::vector<double>> plane_wave(const std::vector<double>& s,
                                            const MicArray& arr, double az,
                                            double el, int fs) {
  const size_t n = s.size();
  const auto spec = rfft(s, n);
  const Vec3 u = unit_direction(az, el);
  std::vector<std::vector<double>> out(arr.num_mics());
  for (size_t m = 0; m < arr.num_mics(); ++m) {
    const double tau = -dot(arr.positions[m], u) / kSoundSpeed;
    auto bins = spec;
    for (size_t k = 0; k < bins.size(); ++k) {
      const double w = 2.0 * kPi * (static_cast<double>(k) * fs / static_cast<double>(n)) * tau;
      bins[k] *= cplx(std::cos(w), -std::sin(w));
    }
    out[m] = irfft(bins, n);
  }
  return out;
}

std::vector<double> vsum(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

}  // namespace

TEST_CASE("delay-and-sum passes a steered plane wave with unit gain") {
  Rng rng(101);
  StftConfig cfg;
  const auto s = random_signal(8192, rng);
  const Spectrogram base = stft(s, cfg);
  const auto arr = MicArray::circular(4, 0.08);
  const Spectrogram mix = steered_spec(base, arr, 25.0, 10.0);

  const Spectrogram out = das_beamform(mix, arr, 25.0, 10.0);
  REQUIRE(out.channels == 1);
  double worst = 0.0, scale = 0.0;
  for (size_t t = 0; t < base.frames; ++t)
    for (size_t f = 0; f < base.bins; ++f) {
      worst = std::max(worst, std::abs(out.at(0, t, f) - base.at(0, t, f)));
      scale = std::max(scale, std::abs(base.at(0, t, f)));
    }
  REQUIRE(scale > 0.0);
  CHECK(worst <= 1e-6 * scale);

  SECTION("channel count must match the array") {
    const auto small = MicArray::circular(3, 0.08);
    CHECK_THROWS_AS(das_beamform(mix, small, 25.0, 10.0), DataError);
  }
}

TEST_CASE("delay-and-sum with identical channels and broadside steering is the identity") {
  Rng rng(11);
  StftConfig cfg;
  const auto s = random_signal(4096, rng);
  const Spectrogram one = stft(s, cfg);
  const auto arr = MicArray::linear(4, 0.3);  // along +x
  Spectrogram mix(cfg, 4, one.frames, one.num_samples);
  for (size_t m = 0; m < 4; ++m)
    for (size_t t = 0; t < one.frames; ++t)
      for (size_t f = 0; f < one.bins; ++f) mix.at(m, t, f) = one.at(0, t, f);

  // broadside: steering direction orthogonal to the array axis, all phases 0
  const Spectrogram out = das_beamform(mix, arr, 90.0, 0.0);
  for (size_t t = 0; t < one.frames; ++t)
    for (size_t f = 0; f < one.bins; ++f)
      REQUIRE(std::abs(out.at(0, t, f) - one.at(0, t, f)) <= 1e-12);
}

TEST_CASE("delay-and-sum is invariant to a consistent channel permutation") {
  Rng rng(21);
  StftConfig cfg;
  const int fs = cfg.sample_rate;
  const auto s = random_signal(8192, rng);
  const auto arr = MicArray::circular(4, 0.06);
  auto x = plane_wave(s, arr, 70.0, 0.0, fs);
  for (auto& ch : x) {
    const auto nz = random_signal(ch.size(), rng, 0.1);
    ch = vsum(ch, nz);
  }
  const Spectrogram spec = stft(x, cfg);
  const Spectrogram ref = das_beamform(spec, arr, 70.0, 0.0);

  const std::vector<size_t> perm = {2, 0, 3, 1};
  MicArray parr;
  parr.layout = arr.layout;
  std::vector<std::vector<double>> px(4);
  for (size_t m = 0; m < 4; ++m) {
    parr.positions.push_back(arr.positions[perm[m]]);
    px[m] = x[perm[m]];
  }
  const Spectrogram pout = das_beamform(stft(px, cfg), parr, 70.0, 0.0);
  for (size_t t = 0; t < ref.frames; ++t)
    for (size_t f = 0; f < ref.bins; ++f)
      REQUIRE(std::abs(pout.at(0, t, f) - ref.at(0, t, f)) <= 1e-12);
}

TEST_CASE("delay-and-sum gains about 10log10(M) against incoherent noise") {
  Rng rng(31);
  StftConfig cfg;
  const int fs = cfg.sample_rate;
  const auto arr = MicArray::circular(4, 0.06);
  const auto s = random_signal(16384, rng);
  const auto xs = plane_wave(s, arr, 40.0, 0.0, fs);
  std::vector<std::vector<double>> xn(4);
  for (auto& ch : xn) ch = random_signal(16384, rng);

  // the beamformer is linear, so signal and noise can be passed separately
  const auto ys = istft_single(das_beamform(stft(xs, cfg), arr, 40.0, 0.0), 0);
  const auto yn = istft_single(das_beamform(stft(xn, cfg), arr, 40.0, 0.0), 0);
  const double gain = 10.0 * std::log10((signal_energy(ys) / signal_energy(yn)) /
                                        (signal_energy(xs[0]) / signal_energy(xn[0])));
  CHECK(std::abs(gain - 10.0 * std::log10(4.0)) < 1.0);

  SECTION("steering away from the source attenuates it") {
    const auto ym = istft_single(das_beamform(stft(xs, cfg), arr, 220.0, 0.0), 0);
    CHECK(signal_energy(ys) > 1.2 * signal_energy(ym));
  }
}

TEST_CASE("mvdr weights are distortionless and solve the loaded system") {
  Rng rng(41);
  const size_t m = 4;
  for (int trial = 0; trial < 100; ++trial) {
    // random Hermitian PSD covariances: Rs rank-2, Rn full rank
    std::vector<cplx> bs(m * 2), ba(m * m);
    for (auto& v : bs) v = cplx(rng.gauss(), rng.gauss());
    for (auto& v : ba) v = cplx(rng.gauss(), rng.gauss());
    std::vector<cplx> rs(m * m, cplx(0, 0)), rn(m * m, cplx(0, 0));
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < m; ++j) {
        for (size_t k = 0; k < 2; ++k) rs[i * m + j] += bs[i * 2 + k] * std::conj(bs[j * 2 + k]);
        for (size_t k = 0; k < m; ++k) rn[i * m + j] += ba[i * m + k] * std::conj(ba[j * m + k]);
      }
    for (size_t i = 0; i < m; ++i) rn[i * m + i] += 0.01;

    const size_t ref = static_cast<size_t>(trial) % m;
    const MvdrWeights wt = mvdr_weight(rs, rn, m, ref);
    REQUIRE(wt.active);
    REQUIRE(wt.d[ref] == cplx(1.0, 0.0));

    cplx wd(0, 0);
    for (size_t i = 0; i < m; ++i) wd += std::conj(wt.w[i]) * wt.d[i];
    CHECK(std::abs(wd - cplx(1.0, 0.0)) < 1e-9);

    // the loaded noise covariance must map w onto a multiple of d
    double tn = 0.0;
    for (size_t i = 0; i < m; ++i) tn += rn[i * m + i].real();
    auto rl = rn;
    for (size_t i = 0; i < m; ++i) rl[i * m + i] += 1e-6 * tn / static_cast<double>(m);
    std::vector<cplx> rw(m, cplx(0, 0));
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < m; ++j) rw[i] += rl[i * m + j] * wt.w[j];
    cplx num(0, 0);
    double den = 0.0, rnorm = 0.0;
    for (size_t i = 0; i < m; ++i) {
      num += std::conj(wt.d[i]) * rw[i];
      den += std::norm(wt.d[i]);
      rnorm += std::norm(rw[i]);
    }
    const cplx lam = num / den;
    double resid = 0.0;
    for (size_t i = 0; i < m; ++i) resid += std::norm(rw[i] - lam * wt.d[i]);
    REQUIRE(resid <= 1e-16 * rnorm + 1e-30);
  }
}

TEST_CASE("solver rejects a singular system") {
  std::vector<cplx> a = {cplx(1, 0), cplx(0, 0), cplx(2, 0), cplx(0, 0)};  // zero column
  std::vector<cplx> b = {cplx(1, 0), cplx(1, 0)};
  CHECK_THROWS_AS(detail::solve_linear(a, b, 2, 7), NumericError);
}

TEST_CASE("oracle mvdr reconstructs the target at the reference channel when noise-free") {
  Rng rng(51);
  StftConfig cfg;
  const auto s = random_signal(8192, rng);
  const Spectrogram base = stft(s, cfg);
  const auto arr = MicArray::circular(4, 0.08);
  const Spectrogram mix = steered_spec(base, arr, -35.0, 0.0);
  const size_t ref = 1;

  Tensor irm(mix.frames, mix.bins);
  for (size_t i = 0; i < irm.v.size(); ++i) irm.v[i] = 1.0;

  const auto rel_spec_err = [&](const Spectrogram& out) {
    double err = 0.0, tot = 0.0;
    for (size_t t = 0; t < mix.frames; ++t)
      for (size_t f = 0; f < mix.bins; ++f) {
        err += std::norm(out.at(0, t, f) - mix.at(ref, t, f));
        tot += std::norm(mix.at(ref, t, f));
      }
    return std::sqrt(err / tot);
  };

  // all-ones mask: the noise covariance is exactly zero, exercising the
  // matched-filter fallback
  const Spectrogram irm_out = irm_mvdr(mix, irm, ref);
  CHECK(rel_spec_err(irm_out) < 1e-3);

  const Spectrogram csm_out = csm_mvdr(mix, mix, ref);
  CHECK(rel_spec_err(csm_out) < 1e-3);

  const auto est = istft_single(irm_out, 0);
  const auto tgt = istft_single(mix, ref);
  double err = 0.0, tot = 0.0;
  for (size_t i = 0; i < est.size(); ++i) {
    err += (est[i] - tgt[i]) * (est[i] - tgt[i]);
    tot += tgt[i] * tgt[i];
  }
  CHECK(std::sqrt(err / tot) < 1e-3);
}

TEST_CASE("an all-zero mask yields silence and the decay cap") {
  Rng rng(61);
  StftConfig cfg;
  std::vector<std::vector<double>> nz(4);
  for (auto& ch : nz) ch = random_signal(8192, rng);
  const Spectrogram mix = stft(nz, cfg);

  Tensor irm(mix.frames, mix.bins);  // zeros: no target anywhere
  const Spectrogram out = irm_mvdr(mix, irm, 0);
  const auto est = istft_single(out, 0);
  CHECK(signal_energy(est) == 0.0);
  const double decay = energy_decay(nz[0], est);
  CHECK(decay == kDecayCapDb);
  CHECK(decay > 60.0);
}

TEST_CASE("oracle mvdr beats the raw mixture on a two-source scene") {
  Rng rng(71);
  StftConfig cfg;
  const int fs = cfg.sample_rate;
  const size_t n = 16384;
  const auto arr = MicArray::circular(4, 0.08);

  const auto sa = random_signal(n, rng);
  const auto sb = random_signal(n, rng);
  const auto xa = plane_wave(sa, arr, 10.0, 0.0, fs);
  const auto xb = plane_wave(sb, arr, 150.0, 0.0, fs);
  std::vector<std::vector<double>> mix(4), resid(4);
  for (size_t m = 0; m < 4; ++m) {
    const auto nz = random_signal(n, rng, 0.05);
    mix[m] = vsum(vsum(xa[m], xb[m]), nz);
    resid[m] = vsum(xb[m], nz);
  }
  const Spectrogram mspec = stft(mix, cfg);
  const double sdr_mix = si_sdr(xa[0], mix[0]);

  SECTION("irm oracle") {
    const Tensor irm = ideal_ratio_mask(stft(xa, cfg), stft(resid, cfg), 0);
    const auto est = istft_single(irm_mvdr(mspec, irm, 0), 0);
    CHECK(si_sdr(xa[0], est) > sdr_mix + 3.0);
  }
  SECTION("csm oracle") {
    const auto est = istft_single(csm_mvdr(mspec, stft(xa, cfg), 0), 0);
    CHECK(si_sdr(xa[0], est) > sdr_mix + 3.0);
  }
  SECTION("two active sources are extracted per source and summed") {
    // heavier noise floor, so removing it is worth more than the small
    // distortion each beamformer introduces
    Rng rng2(72);
    std::vector<std::vector<double>> mix2(4);
    for (size_t m = 0; m < 4; ++m)
      mix2[m] = vsum(vsum(xa[m], xb[m]), random_signal(n, rng2, 0.3));
    const Spectrogram m2 = stft(mix2, cfg);
    const auto ea = istft_single(csm_mvdr(m2, stft(xa, cfg), 0), 0);
    const auto eb = istft_single(csm_mvdr(m2, stft(xb, cfg), 0), 0);
    const auto est = vsum(ea, eb);
    const auto tgt = vsum(xa[0], xb[0]);
    CHECK(si_sdr(tgt, est) > si_sdr(tgt, mix2[0]) + 2.0);
  }
}

TEST_CASE("si-sdr hand values") {
  Rng rng(81);
  const auto s = random_signal(2048, rng);

  SECTION("perfect and scaled estimates hit the cap") {
    CHECK(si_sdr(s, s) == kSdrCapDb);
    auto two = s;
    for (double& v : two) v *= 2.0;
    CHECK(si_sdr(s, two) == kSdrCapDb);
  }
  SECTION("orthogonal error at one tenth of the energy gives exactly 10 dB") {
    const auto v = random_signal(2048, rng);
    double vs = 0.0, ss = 0.0;
    for (size_t i = 0; i < s.size(); ++i) {
      vs += v[i] * s[i];
      ss += s[i] * s[i];
    }
    std::vector<double> e(2048);
    for (size_t i = 0; i < e.size(); ++i) e[i] = v[i] - (vs / ss) * s[i];
    double es = 0.0;
    for (double x : e) es += x * x;
    const double g = std::sqrt(ss / (10.0 * es));
    std::vector<double> est(2048);
    for (size_t i = 0; i < est.size(); ++i) est[i] = s[i] + g * e[i];
    CHECK(si_sdr(s, est) == Catch::Approx(10.0).margin(1e-9));
  }
  SECTION("invariant to a positive global gain on the estimate") {
    auto est = random_signal(2048, rng);
    for (size_t i = 0; i < est.size(); ++i) est[i] += s[i];
    const double base = si_sdr(s, est);
    auto scaled = est;
    for (double& x : scaled) x *= 3.7;
    CHECK(si_sdr(s, scaled) == Catch::Approx(base).margin(1e-9));
  }
  SECTION("silent or mismatched references are data errors") {
    CHECK_THROWS_AS(si_sdr(std::vector<double>(8, 0.0), std::vector<double>(8, 1.0)),
                    DataError);
    CHECK_THROWS_AS(si_sdr(s, std::vector<double>(7, 0.0)), DataError);
  }
}

TEST_CASE("energy decay hand values") {
  Rng rng(91);
  const auto mix = random_signal(2048, rng);

  CHECK(energy_decay(mix, mix) == Catch::Approx(0.0).margin(1e-12));
  auto tenth = mix;
  for (double& v : tenth) v *= 0.1;
  CHECK(energy_decay(mix, tenth) == Catch::Approx(20.0).margin(1e-12));
  CHECK(energy_decay(mix, std::vector<double>(2048, 0.0)) == kDecayCapDb);

  SECTION("scaling the estimate moves the decay by -20log10(g)") {
    auto est = random_signal(2048, rng, 0.05);
    const double base = energy_decay(mix, est);
    auto scaled = est;
    for (double& v : scaled) v *= 4.0;
    CHECK(energy_decay(mix, scaled) ==
          Catch::Approx(base - 20.0 * std::log10(4.0)).margin(1e-12));
  }
  SECTION("a silent mixture is a data error") {
    CHECK_THROWS_AS(energy_decay(std::vector<double>(16, 0.0), mix), DataError);
  }
}

TEST_CASE("metric reports format empty queries as n/a and group by source count") {
  std::vector<UtteranceMetrics> rows(3);
  rows[0] = {"scene_a", 1, 8.5, 3.25};
  rows[1] = {"scene_b", 0, std::numeric_limits<double>::quiet_NaN(), 42.0};
  rows[2] = {"scene_c", 1, 11.5, 4.75};

  const std::string csv = metrics_csv(rows);
  CHECK(csv.find("scene_id,q,sdr_db,decay_db,stoi,pesq\n") == 0);
  CHECK(csv.find("scene_a,1,8.5000,3.2500,n/a,n/a\n") != std::string::npos);
  CHECK(csv.find("scene_b,0,n/a,42.0000,n/a,n/a\n") != std::string::npos);

  const nlohmann::json agg = aggregate_metrics(rows);
  CHECK(agg["utterances"] == 3);
  CHECK(agg["groups"]["q0"]["count"] == 1);
  CHECK(agg["groups"]["q0"].count("sdr_db_mean") == 0);
  CHECK(agg["groups"]["q0"]["decay_db_mean"] == Catch::Approx(42.0));
  CHECK(agg["groups"]["q1"]["count"] == 2);
  CHECK(agg["groups"]["q1"]["sdr_db_mean"] == Catch::Approx(10.0));
  CHECK(agg["groups"]["q1"]["sdr_db_std"] == Catch::Approx(1.5));
  CHECK(agg["stoi"] == "n/a");
  CHECK(agg["pesq"] == "n/a");
}
