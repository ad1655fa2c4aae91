// Copyright 2026 The RSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Region-conditioned multi-channel band-split recurrent extraction network.
// Two variants share the trunk: the angle variant conditions on aggregated
// direction features sampled inside the azimuth window, the distance variant
// on a learned embedding of the distance threshold. The forward pass runs on
// the reverse-mode tape end to end (including synthesis), so training
// gradients are exact.

#ifndef RSE_MODEL_HPP_
#define RSE_MODEL_HPP_

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rse/autodiff.hpp"
#include "rse/bands.hpp"
#include "rse/geometry.hpp"
#include "rse/layers.hpp"
#include "rse/region.hpp"
#include "rse/spatial.hpp"
#include "rse/stft.hpp"
#include "rse/tensor.hpp"
#include "rse/util.hpp"

namespace rse {

constexpr double kSnrCapDb = 60.0;
constexpr double kLossLambda = 0.01;

enum class ModelVariant { Angle, Distance };

inline std::string variant_name(ModelVariant v) {
  return v == ModelVariant::Angle ? "angle" : "distance";
}

inline ModelVariant variant_from_string(const std::string& s) {
  if (s == "angle") return ModelVariant::Angle;
  if (s == "distance") return ModelVariant::Distance;
  throw ConfigError("unknown model variant: " + s);
}

struct ModelConfig {
  ModelVariant variant = ModelVariant::Angle;
  size_t blocks = 8;       // residual band/sequence modeling blocks
  size_t hidden = 48;      // trunk feature dimension per subband
  size_t region_dim = 16;  // aggregated region feature dimension
  std::string band_scheme = "bs1";
  MicArray array = MicArray::preset("circ8_5cm");
  std::vector<size_t> pair_mics;  // mics used for pairs; empty = all
  AggMethod agg = AggMethod::RNNLoop;
  SamplingStrategy sampling = SamplingStrategy::fixed_number(8);
  StftConfig stft;
  size_t ref_channel = 0;

  std::vector<MicPair> make_pairs() const { return enumerate_pairs(array, pair_mics); }
  BandLayout make_bands() const { return build_band_layout(band_scheme, stft); }

  void validate() const {
    if (blocks == 0 || hidden == 0 || region_dim == 0)
      throw ConfigError("ModelConfig: blocks, hidden, region_dim must be positive");
    array.validate();
    stft.validate();
    sampling.validate();
    if (ref_channel >= array.num_mics())
      throw ConfigError("ModelConfig: reference channel out of range");
    if (make_pairs().empty()) throw ConfigError("ModelConfig: no microphone pairs");
    make_bands();  // throws on a bad scheme
    if (variant == ModelVariant::Angle &&
        (agg == AggMethod::Concatenate || agg == AggMethod::TAC) &&
        sampling.mode == SamplingMode::FixedInterval)
      throw ConfigError(
          "ModelConfig: width-dependent view counts (fixed-interval sampling) "
          "cannot feed a fixed-width aggregator (concat/tac); use fixed-number "
          "sampling or an order-free aggregation method");
  }

  // Named sizes from the model-size ablation, plus a tiny test preset.
  static ModelConfig preset(const std::string& name,
                            ModelVariant v = ModelVariant::Angle) {
    ModelConfig c;
    c.variant = v;
    if (name == "M") {
      c.blocks = 8; c.hidden = 48; c.region_dim = 16; c.band_scheme = "bs1";
    } else if (name == "S") {
      c.blocks = 8; c.hidden = 36; c.region_dim = 16; c.band_scheme = "bs1";
    } else if (name == "XS") {
      c.blocks = 6; c.hidden = 32; c.region_dim = 16; c.band_scheme = "bs2";
    } else if (name == "XXS") {
      c.blocks = 5; c.hidden = 24; c.region_dim = 16; c.band_scheme = "bs2";
    } else if (name == "XXXS") {
      c.blocks = 4; c.hidden = 16; c.region_dim = 12; c.band_scheme = "bs2";
    } else if (name == "toy") {
      c.blocks = 2; c.hidden = 8; c.region_dim = 4; c.band_scheme = "equal4";
      c.sampling = SamplingStrategy::fixed_number(4);
    } else {
      throw ConfigError("unknown model preset: " + name);
    }
    c.validate();
    return c;
  }
};

inline void to_json(nlohmann::json& j, const StftConfig& c) {
  j = {{"sample_rate", c.sample_rate},
       {"window_len", c.window_len},
       {"hop", c.hop},
       {"fft_size", c.fft_size}};
}
inline void from_json(const nlohmann::json& j, StftConfig& c) {
  j.at("sample_rate").get_to(c.sample_rate);
  j.at("window_len").get_to(c.window_len);
  j.at("hop").get_to(c.hop);
  j.at("fft_size").get_to(c.fft_size);
}

inline void to_json(nlohmann::json& j, const SamplingStrategy& s) {
  j = {{"mode", s.mode == SamplingMode::FixedNumber ? "number" : "interval"},
       {"num_views", s.num_views},
       {"interval_deg", s.interval_deg}};
}
inline void from_json(const nlohmann::json& j, SamplingStrategy& s) {
  const std::string mode = j.at("mode").get<std::string>();
  if (mode == "number") s.mode = SamplingMode::FixedNumber;
  else if (mode == "interval") s.mode = SamplingMode::FixedInterval;
  else throw ConfigError("unknown sampling mode: " + mode);
  j.at("num_views").get_to(s.num_views);
  j.at("interval_deg").get_to(s.interval_deg);
}

inline void to_json(nlohmann::json& j, const MicArray& a) {
  j = {{"layout", a.layout}, {"positions", a.positions}};
}
inline void from_json(const nlohmann::json& j, MicArray& a) {
  j.at("layout").get_to(a.layout);
  j.at("positions").get_to(a.positions);
  a.validate();
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"variant", variant_name(c.variant)},
       {"blocks", c.blocks},
       {"hidden", c.hidden},
       {"region_dim", c.region_dim},
       {"band_scheme", c.band_scheme},
       {"array", c.array},
       {"pair_mics", c.pair_mics},
       {"agg", agg_method_name(c.agg)},
       {"sampling", c.sampling},
       {"stft", c.stft},
       {"ref_channel", c.ref_channel}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.variant = variant_from_string(j.at("variant").get<std::string>());
  j.at("blocks").get_to(c.blocks);
  j.at("hidden").get_to(c.hidden);
  j.at("region_dim").get_to(c.region_dim);
  j.at("band_scheme").get_to(c.band_scheme);
  j.at("array").get_to(c.array);
  j.at("pair_mics").get_to(c.pair_mics);
  c.agg = agg_method_from_string(j.at("agg").get<std::string>());
  j.at("sampling").get_to(c.sampling);
  j.at("stft").get_to(c.stft);
  j.at("ref_channel").get_to(c.ref_channel);
  c.validate();
}

// A constructed model: configuration, derived band layout and pair list, and
// every named parameter/buffer. Parameter creation order is fixed so a given
// seed always produces the same initialization.
struct Model {
  ModelConfig cfg;
  BandLayout bands;
  std::vector<MicPair> pairs;
  ParamStore store;

  Model(ModelConfig c, uint64_t seed) : cfg(std::move(c)) {
    cfg.validate();
    bands = cfg.make_bands();
    pairs = cfg.make_pairs();
    Rng rng(seed);
    const size_t h = cfg.hidden, p = cfg.region_dim, np = pairs.size();
    for (size_t k = 0; k < bands.num_bands(); ++k) {
      const std::string ks = std::to_string(k);
      const size_t bw = bands.width(k);
      init_norm(store, "split.spec.bn" + ks, 2 * bw, true);
      init_linear(store, "split.spec.fc" + ks, 2 * bw, h, rng);
      const size_t spat_dim = cfg.variant == ModelVariant::Angle ? 2 * np * bw : np * bw;
      init_norm(store, "split.spat.bn" + ks, spat_dim, true);
      init_linear(store, "split.spat.fc" + ks, spat_dim, h, rng);
      if (cfg.variant == ModelVariant::Angle) {
        init_agg_band(store, "agg.band" + ks, cfg.agg, bw, p, rng);
        const size_t rd = agg_dim(cfg.agg, cfg.sampling.num_views, bw, p);
        init_norm(store, "split.reg.bn" + ks, rd, true);
        init_linear(store, "split.reg.fc" + ks, rd, h, rng);
      } else {
        init_distance_embedding(store, "deg.band" + ks, p, rng);
        // distance embeddings skip input normalization
        init_linear(store, "split.reg.fc" + ks, p, h, rng);
      }
    }
    for (size_t r = 0; r < cfg.blocks; ++r) {
      const std::string b = "block" + std::to_string(r);
      init_norm(store, b + ".time.bn", h, true);
      init_lstm(store, b + ".time.lstm", h, 2 * h, rng);
      init_linear(store, b + ".time.fc", 2 * h, h, rng);
      init_norm(store, b + ".band.ln", h, false);
      init_lstm(store, b + ".band.lstm.fwd", h, 2 * h, rng);
      init_lstm(store, b + ".band.lstm.bwd", h, 2 * h, rng);
      init_linear(store, b + ".band.fc", 4 * h, h, rng);
    }
    for (size_t k = 0; k < bands.num_bands(); ++k) {
      const std::string ks = std::to_string(k);
      const size_t bw = bands.width(k);
      init_norm(store, "mask.bn" + ks, h, true);
      init_linear(store, "mask.fc1." + ks, h, 4 * h, rng);
      init_linear(store, "mask.fc2." + ks, 4 * h, 4 * bw, rng);  // halved by the gate
    }
  }

  size_t num_params() const { return store.num_params(); }
};

// ---- feature preparation (constants of one forward pass) ----

// Everything the network consumes that does not carry gradients: reference
// spectrogram, per-band spectral/spatial features, and either sampled
// direction-feature views (angle) or the distance threshold (distance).
struct ModelFeatures {
  size_t frames = 0, n_samples = 0;
  Tensor yre, yim;                 // [T, F] reference channel
  std::vector<Tensor> spec;        // per band [T, 2*BW]  (Re | Im)
  std::vector<Tensor> spat;        // per band [T, 2*P*BW] cos/sin phase diffs,
                                   // or [T, P*BW] level diffs (distance variant)
  std::vector<std::vector<Tensor>> views;  // angle: [band][view] [T, BW]
  std::vector<double> sort_keys;           // angle: per-view ordering key
  double dist = 0.0;                       // distance: clamped threshold (m)
};

inline void check_query_compat(const ModelConfig& cfg, const QueryRegion& q) {
  q.validate();
  switch (q.variant) {
    case RegionVariant::Angular:
      if (cfg.variant != ModelVariant::Angle)
        throw ConfigError("angular query requires an angle-variant model");
      return;
    case RegionVariant::Spherical:
      if (cfg.variant != ModelVariant::Distance)
        throw ConfigError("distance query requires a distance-variant model");
      return;
    case RegionVariant::Conical:
      throw ConfigError(
          "conical query needs both model variants; use extract_conical");
    case RegionVariant::Ring:
      throw ConfigError(
          "ring query is answered by two distance passes; use extract");
  }
}

inline ModelFeatures compute_model_features(const Model& m,
                                            const std::vector<std::vector<double>>& mix,
                                            const QueryRegion& query) {
  const ModelConfig& cfg = m.cfg;
  check_query_compat(cfg, query);
  if (mix.size() != cfg.array.num_mics())
    throw DataError("mixture has " + std::to_string(mix.size()) +
                    " channels; the array expects " +
                    std::to_string(cfg.array.num_mics()));
  const Spectrogram spec = stft(mix, cfg.stft);
  const FeaturePack pack = compute_features(spec, m.pairs);
  const size_t t_frames = spec.frames, bins = spec.bins, np = m.pairs.size();
  if (m.bands.total_bins() != bins)
    throw ConfigError("band layout does not match the spectrogram bins");

  ModelFeatures ft;
  ft.frames = t_frames;
  ft.n_samples = spec.num_samples;
  ft.yre = Tensor(t_frames, bins);
  ft.yim = Tensor(t_frames, bins);
  for (size_t t = 0; t < t_frames; ++t)
    for (size_t f = 0; f < bins; ++f) {
      const cplx y = spec.at(cfg.ref_channel, t, f);
      ft.yre.at(t, f) = y.real();
      ft.yim.at(t, f) = y.imag();
    }

  const size_t nbands = m.bands.num_bands();
  ft.spec.reserve(nbands);
  ft.spat.reserve(nbands);
  for (size_t k = 0; k < nbands; ++k) {
    const auto [b0, b1] = m.bands.ranges[k];
    const size_t bw = b1 - b0;
    Tensor sp(t_frames, 2 * bw);
    for (size_t t = 0; t < t_frames; ++t)
      for (size_t f = 0; f < bw; ++f) {
        sp.at(t, f) = ft.yre.at(t, b0 + f);
        sp.at(t, bw + f) = ft.yim.at(t, b0 + f);
      }
    ft.spec.push_back(std::move(sp));

    if (cfg.variant == ModelVariant::Angle) {
      Tensor sf(t_frames, 2 * np * bw);
      for (size_t p = 0; p < np; ++p)
        for (size_t t = 0; t < t_frames; ++t)
          for (size_t f = 0; f < bw; ++f) {
            const double ipd = pack.ipd_at(p, t, b0 + f);
            sf.at(t, (2 * p) * bw + f) = std::cos(ipd);
            sf.at(t, (2 * p + 1) * bw + f) = std::sin(ipd);
          }
      ft.spat.push_back(std::move(sf));
    } else {
      Tensor sf(t_frames, np * bw);
      for (size_t p = 0; p < np; ++p)
        for (size_t t = 0; t < t_frames; ++t)
          for (size_t f = 0; f < bw; ++f)
            sf.at(t, p * bw + f) = pack.ild_at(p, t, b0 + f);
      ft.spat.push_back(std::move(sf));
    }
  }

  if (cfg.variant == ModelVariant::Angle) {
    const auto azimuths = sample_directions(query, cfg.sampling);
    const double el = view_elevation(query);
    ft.sort_keys = view_sort_keys(m.pairs, azimuths, el);
    ft.views.resize(nbands);
    for (double az : azimuths) {
      const Tensor v = direction_feature(pack, cfg.stft, az, el);
      for (size_t k = 0; k < nbands; ++k) {
        const auto [b0, b1] = m.bands.ranges[k];
        Tensor vk(t_frames, b1 - b0);
        for (size_t t = 0; t < t_frames; ++t)
          for (size_t f = b0; f < b1; ++f) vk.at(t, f - b0) = v.at(t, f);
        ft.views[k].push_back(std::move(vk));
      }
    }
  } else {
    ft.dist = clamp_embed_distance(query.d_hi);
  }
  return ft;
}

// ---- differentiable forward pass ----

// Per-band fusion of the three feature paths into [T, H] each: normalization
// plus a band-specific linear map per path, outputs summed. The distance
// path takes d_node (a [1,1] tape node) through the per-band embedding MLP.
inline std::vector<int> band_split_fuse(TapeCtx& ctx, const Model& m,
                                        const ModelFeatures& ft, int d_node = -1) {
  Tape& tp = ctx.tape;
  const size_t nbands = m.bands.num_bands();
  if (ft.spec.size() != nbands || ft.spat.size() != nbands)
    throw DataError("band_split_fuse: features do not match the band layout");
  const size_t t_frames = ft.spec[0].rows();
  std::vector<int> fused(nbands);
  for (size_t k = 0; k < nbands; ++k) {
    const std::string ks = std::to_string(k);
    const int sp = batchnorm(ctx, ctx.constant(ft.spec[k]), "split.spec.bn" + ks);
    const int sp_h = linear(ctx, sp, "split.spec.fc" + ks);
    const int sf = batchnorm(ctx, ctx.constant(ft.spat[k]), "split.spat.bn" + ks);
    const int sf_h = linear(ctx, sf, "split.spat.fc" + ks);
    int rg_h;
    if (m.cfg.variant == ModelVariant::Angle) {
      if (ft.views.size() != nbands || ft.views[k].empty())
        throw DataError("band_split_fuse: missing direction-feature views");
      std::vector<int> view_ids;
      view_ids.reserve(ft.views[k].size());
      for (const Tensor& v : ft.views[k]) view_ids.push_back(ctx.constant(v));
      const int agg = agg_band(ctx, view_ids, m.cfg.agg, "agg.band" + ks,
                               m.cfg.region_dim, ft.sort_keys);
      const int rn = batchnorm(ctx, agg, "split.reg.bn" + ks);
      rg_h = linear(ctx, rn, "split.reg.fc" + ks);
    } else {
      if (d_node < 0) throw NumericError("band_split_fuse: missing distance node");
      const int emb = distance_embedding(ctx, d_node, "deg.band" + ks);
      const int eh = linear(ctx, emb, "split.reg.fc" + ks);  // [1, H]
      rg_h = tp.repeat_rows(eh, t_frames);
    }
    fused[k] = tp.add(tp.add(sp_h, sf_h), rg_h);
  }
  return fused;
}

struct ModelForward {
  int mask_re = -1, mask_im = -1;  // [T, F] complex mask for the ref channel
  int z_re = -1, z_im = -1;        // masked reference spectrogram
  int wave = -1;                   // [1, n_samples] synthesized estimate
  int d_node = -1;                 // distance variant: the threshold leaf
};

// Synthesis as a single tape node: inverse DFT of each masked frame plus
// normalized overlap-add. The adjoint runs the exact transpose (overlap-add
// adjoint, then the real-DFT adjoint with DC/Nyquist weights).
inline int synthesis_node(Tape& tp, int zre, int zim, const StftConfig& cfg,
                          size_t n_samples) {
  const Tensor& re = tp.val(zre);
  const Tensor& im = tp.val(zim);
  if (!re.same_shape(im)) throw NumericError("synthesis: Re/Im shape mismatch");
  const size_t frames = re.rows(), bins = re.cols();
  if (bins != cfg.num_bins()) throw NumericError("synthesis: bin count mismatch");
  Spectrogram spec(cfg, 1, frames, n_samples);
  for (size_t t = 0; t < frames; ++t)
    for (size_t f = 0; f < bins; ++f)
      spec.at(0, t, f) = cplx(re.at(t, f), im.at(t, f));
  Tensor out(1, n_samples);
  out.v = istft(spec)[0];
  const int id = tp.make_node(std::move(out),
                              tp.needs_grad(zre) || tp.needs_grad(zim), nullptr);
  tp.set_back(id, [id, zre, zim, cfg, frames, bins](Tape& t) {
    const Tensor g = t.grad(id);
    const auto gframes = istft_ola_adjoint(g.v, cfg, frames);
    const size_t n = cfg.fft_size;
    Tensor gre(frames, bins), gim(frames, bins);
    std::vector<double> gpad(n, 0.0);
    for (size_t tt = 0; tt < frames; ++tt) {
      std::fill(gpad.begin(), gpad.end(), 0.0);
      std::copy(gframes[tt].begin(), gframes[tt].end(), gpad.begin());
      const auto spec_g = rfft(gpad, n);
      for (size_t f = 0; f < bins; ++f) {
        const double w = (f == 0 || f == n / 2) ? 1.0 : 2.0;
        gre.at(tt, f) = w / static_cast<double>(n) * spec_g[f].real();
        gim.at(tt, f) = w / static_cast<double>(n) * spec_g[f].imag();
      }
    }
    t.accum(zre, [&](Tensor& d) {
      for (size_t i = 0; i < d.numel(); ++i) d.v[i] += gre.v[i];
    });
    t.accum(zim, [&](Tensor& d) {
      for (size_t i = 0; i < d.numel(); ++i) d.v[i] += gim.v[i];
    });
  });
  return id;
}

// Full forward pass: fuse, R residual blocks (recurrence over time, then
// over bands), per-band mask estimation, mask application, synthesis.
// In inference mode (ctx.training == false) every output frame depends only
// on input frames at or before it: normalization uses stored statistics, the
// time recurrence is unidirectional, and the band recurrence never crosses
// frames.
inline ModelForward model_forward(TapeCtx& ctx, const Model& m,
                                  const ModelFeatures& ft) {
  Tape& tp = ctx.tape;
  const size_t nk = m.bands.num_bands(), h = m.cfg.hidden;
  const size_t t_frames = ft.frames;
  ModelForward out;
  if (m.cfg.variant == ModelVariant::Distance)
    out.d_node = tp.leaf(Tensor::scalar(ft.dist));

  const auto fused = band_split_fuse(ctx, m, ft, out.d_node);

  // Row orders for the two recurrence directions over the same [T*K, H] data:
  // time-major row t*K + k, band-major row k*T + t.
  std::vector<size_t> to_time(nk * t_frames), to_band(nk * t_frames);
  for (size_t t = 0; t < t_frames; ++t)
    for (size_t k = 0; k < nk; ++k) {
      to_time[t * nk + k] = k * t_frames + t;
      to_band[k * t_frames + t] = t * nk + k;
    }

  int x = tp.permute_rows(tp.concat_rows(fused), to_time);  // [T*K, H] time-major
  for (size_t r = 0; r < m.cfg.blocks; ++r) {
    const std::string b = "block" + std::to_string(r);
    {  // recurrence across frames, bands as the batch
      const int nrm = batchnorm(ctx, x, b + ".time.bn");
      std::vector<int> steps(t_frames);
      for (size_t t = 0; t < t_frames; ++t)
        steps[t] = tp.slice_rows(nrm, t * nk, (t + 1) * nk);
      const auto hs = lstm(ctx, steps, b + ".time.lstm", 2 * h);
      const int y = linear(ctx, tp.concat_rows(hs), b + ".time.fc");
      x = tp.add(x, y);
    }
    {  // recurrence across bands, frames as the batch
      const int nrm = layernorm(ctx, x, b + ".band.ln");
      const int bm = tp.permute_rows(nrm, to_band);
      std::vector<int> steps(nk);
      for (size_t k = 0; k < nk; ++k)
        steps[k] = tp.slice_rows(bm, k * t_frames, (k + 1) * t_frames);
      const auto hs = bilstm(ctx, steps, b + ".band.lstm", 2 * h);
      const int y = linear(ctx, tp.concat_rows(hs), b + ".band.fc");
      x = tp.add(x, tp.permute_rows(y, to_time));
    }
  }

  const int xb = tp.permute_rows(x, to_band);
  std::vector<int> mre(nk), mim(nk);
  for (size_t k = 0; k < nk; ++k) {
    const std::string ks = std::to_string(k);
    const size_t bw = m.bands.width(k);
    const int xk = tp.slice_rows(xb, k * t_frames, (k + 1) * t_frames);
    const int nrm = batchnorm(ctx, xk, "mask.bn" + ks);
    const int hid = tp.tanh_op(linear(ctx, nrm, "mask.fc1." + ks));
    const int gated = glu(ctx, linear(ctx, hid, "mask.fc2." + ks));  // [T, 2*BW]
    mre[k] = tp.slice_cols(gated, 0, bw);
    mim[k] = tp.slice_cols(gated, bw, 2 * bw);
  }
  out.mask_re = tp.concat_cols(mre);
  out.mask_im = tp.concat_cols(mim);

  const int yre = ctx.constant(ft.yre);
  const int yim = ctx.constant(ft.yim);
  out.z_re = tp.sub(tp.mul(out.mask_re, yre), tp.mul(out.mask_im, yim));
  out.z_im = tp.add(tp.mul(out.mask_re, yim), tp.mul(out.mask_im, yre));
  out.wave = synthesis_node(tp, out.z_re, out.z_im, m.cfg.stft, ft.n_samples);
  return out;
}

// ---- loss ----

// q == 0: sparsity penalty lambda * (|Re Z|_1 + |Im Z|_1) on the masked
// spectrogram. q > 0: negative SNR of the synthesized estimate against the
// target, capped at kSnrCapDb (the capped branch is constant, so exact
// matches stop producing gradients instead of exploding).
inline int model_loss(TapeCtx& ctx, const ModelForward& f,
                      const std::vector<double>& target, size_t q,
                      double lambda = kLossLambda) {
  Tape& tp = ctx.tape;
  if (q == 0)
    return tp.scale(tp.add(tp.abs_sum(f.z_re), tp.abs_sum(f.z_im)), lambda);
  const Tensor& est = tp.val(f.wave);
  if (target.size() != est.numel())
    throw DataError("loss: estimate/target length mismatch");
  const double te = signal_energy(target);
  if (te <= 0.0) throw DataError("loss: zero-energy target with q > 0");
  double res = 0.0;
  for (size_t i = 0; i < target.size(); ++i) {
    const double d = est.v[i] - target[i];
    res += d * d;
  }
  if (res <= te * std::pow(10.0, -kSnrCapDb / 10.0))
    return tp.constant(Tensor::scalar(-kSnrCapDb));
  Tensor tgt(1, target.size());
  std::copy(target.begin(), target.end(), tgt.v.begin());
  const int err = tp.sub(f.wave, tp.constant(std::move(tgt)));
  const int den = tp.sum_all(tp.mul(err, err));
  const int ratio = tp.div(tp.constant(Tensor::scalar(te)), den);
  const int snr = tp.scale(tp.log_op(ratio), 10.0 / std::log(10.0));
  return tp.scale(snr, -1.0);
}

// ---- inference drivers ----

inline std::vector<double> run_forward_wave(Model& m,
                                            const std::vector<std::vector<double>>& mix,
                                            const QueryRegion& query) {
  const ModelFeatures ft = compute_model_features(m, mix, query);
  TapeCtx ctx(&m.store, false);
  const ModelForward f = model_forward(ctx, m, ft);
  return ctx.tape.val(f.wave).v;
}

// Masked spectrogram of the reference channel, as a plain value.
struct MaskedSpec {
  Tensor zre, zim;     // [T, F]
  Tensor mre, mim;     // the mask itself
  size_t n_samples = 0;
};

inline MaskedSpec run_forward_spec(Model& m,
                                   const std::vector<std::vector<double>>& mix,
                                   const QueryRegion& query) {
  const ModelFeatures ft = compute_model_features(m, mix, query);
  TapeCtx ctx(&m.store, false);
  const ModelForward f = model_forward(ctx, m, ft);
  MaskedSpec s;
  s.zre = ctx.tape.val(f.z_re);
  s.zim = ctx.tape.val(f.z_im);
  s.mre = ctx.tape.val(f.mask_re);
  s.mim = ctx.tape.val(f.mask_im);
  s.n_samples = ft.n_samples;
  return s;
}

// Apply the model's mask to every input channel and resynthesize, preserving
// inter-channel cues for a following extraction stage.
inline std::vector<std::vector<double>> mask_all_channels(
    Model& m, const std::vector<std::vector<double>>& mix, const QueryRegion& query) {
  const MaskedSpec ms = run_forward_spec(m, mix, query);
  const Spectrogram spec = stft(mix, m.cfg.stft);
  Spectrogram masked(m.cfg.stft, spec.channels, spec.frames, spec.num_samples);
  for (size_t c = 0; c < spec.channels; ++c)
    for (size_t t = 0; t < spec.frames; ++t)
      for (size_t f = 0; f < spec.bins; ++f) {
        const cplx mk(ms.mre.at(t, f), ms.mim.at(t, f));
        masked.at(c, t, f) = mk * spec.at(c, t, f);
      }
  return istft(masked);
}

// Single-model extraction. Ring queries run the documented two-pass
// construction: the estimate for d in [a, b] is the difference of the
// estimates for [0, b] and [0, a] at waveform level.
inline std::vector<double> extract(Model& m, const std::vector<std::vector<double>>& mix,
                                   const QueryRegion& query) {
  query.validate();
  if (query.variant == RegionVariant::Ring) {
    if (m.cfg.variant != ModelVariant::Distance)
      throw ConfigError("ring query requires a distance-variant model");
    const auto outer = run_forward_wave(m, mix, QueryRegion::spherical(query.d_hi));
    auto inner = run_forward_wave(m, mix, QueryRegion::spherical(query.d_lo));
    std::vector<double> out(outer.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = outer[i] - inner[i];
    return out;
  }
  return run_forward_wave(m, mix, query);
}

enum class ConicalScheme { Intersect, AngleThenDistance, DistanceThenAngle };

inline ConicalScheme conical_scheme_from_string(const std::string& s) {
  if (s == "intersect") return ConicalScheme::Intersect;
  if (s == "a-then-d") return ConicalScheme::AngleThenDistance;
  if (s == "d-then-a") return ConicalScheme::DistanceThenAngle;
  throw ConfigError("unknown conical scheme: " + s);
}

// Conical query composition from one angle and one distance model: either
// per-bin minimum-magnitude intersection of the two masked spectrograms, or
// a cascade where stage 1 masks all channels and stage 2 extracts from the
// resynthesized multichannel signal.
inline std::vector<double> extract_conical(Model& angle_model, Model& dist_model,
                                           const std::vector<std::vector<double>>& mix,
                                           const QueryRegion& query,
                                           ConicalScheme scheme) {
  query.validate();
  if (query.variant != RegionVariant::Conical)
    throw ConfigError("extract_conical: query must be conical");
  if (angle_model.cfg.variant != ModelVariant::Angle ||
      dist_model.cfg.variant != ModelVariant::Distance)
    throw ConfigError("extract_conical: need one angle and one distance model");
  const QueryRegion qa =
      QueryRegion::angular(query.az_lo, query.az_hi, query.el_lo, query.el_hi);
  const QueryRegion qd = QueryRegion::spherical(query.d_hi);
  switch (scheme) {
    case ConicalScheme::Intersect: {
      const MaskedSpec a = run_forward_spec(angle_model, mix, qa);
      const MaskedSpec d = run_forward_spec(dist_model, mix, qd);
      if (!a.zre.same_shape(d.zre))
        throw DataError("extract_conical: models disagree on the analysis grid");
      const size_t frames = a.zre.rows(), bins = a.zre.cols();
      Spectrogram z(angle_model.cfg.stft, 1, frames, a.n_samples);
      for (size_t t = 0; t < frames; ++t)
        for (size_t f = 0; f < bins; ++f) {
          const cplx za(a.zre.at(t, f), a.zim.at(t, f));
          const cplx zd(d.zre.at(t, f), d.zim.at(t, f));
          z.at(0, t, f) = std::norm(za) <= std::norm(zd) ? za : zd;
        }
      return istft(z)[0];
    }
    case ConicalScheme::AngleThenDistance:
      return extract(dist_model, mask_all_channels(angle_model, mix, qa), qd);
    case ConicalScheme::DistanceThenAngle:
      return extract(angle_model, mask_all_channels(dist_model, mix, qd), qa);
  }
  throw ConfigError("extract_conical: bad scheme");
}

// ---- training ----

struct TrainItem {
  std::vector<std::vector<double>> mixture;  // [channel][sample]
  std::vector<double> target;                // reference-channel target
  size_t q = 0;
  QueryRegion query;
};

struct TrainConfig {
  double lr0 = 1e-3;
  double lr_decay = 0.98;
  size_t epochs_per_decay = 2;  // one epoch = one pass over the scene list
  double weight_decay = 0.01;
  double lambda_inactive = kLossLambda;
  size_t crop_samples = 0;  // 0 = train on full-length scenes
  uint64_t seed = 1;
};

struct TrainStats {
  size_t step = 0;  // completed steps after this one
  double loss = 0.0;
  double lr = 0.0;
  size_t scene = 0;
  size_t q = 0;
};

// One scene per optimization step, cycling the fixed scene list. Features are
// computed once per scene (deterministic crop) and cached across epochs, so
// a training run is a pure function of (model seed, scenes, TrainConfig).
class Trainer {
 public:
  Trainer(Model& model, std::vector<TrainItem> items, const TrainConfig& tc)
      : model_(model), items_(std::move(items)), tc_(tc) {
    if (items_.empty()) throw ConfigError("trainer: no training scenes");
    for (const TrainItem& it : items_) {
      if (it.mixture.empty() || it.mixture[0].empty())
        throw DataError("trainer: empty mixture");
      if (it.target.size() != it.mixture[0].size())
        throw DataError("trainer: target length differs from mixture");
    }
    opt_.lr = tc_.lr0;
    opt_.weight_decay = tc_.weight_decay;
    cache_.resize(items_.size());
  }

  double current_lr() const {
    const size_t epoch = step_ / items_.size();
    const double n = static_cast<double>(epoch / tc_.epochs_per_decay);
    return tc_.lr0 * std::pow(tc_.lr_decay, n);
  }

  TrainStats step() {
    const size_t idx = step_ % items_.size();
    const Example& ex = example(idx);
    opt_.lr = current_lr();
    TapeCtx ctx(&model_.store, true);
    const ModelForward f = model_forward(ctx, model_, ex.feats);
    const int loss = model_loss(ctx, f, ex.target, ex.q, tc_.lambda_inactive);
    const double lv = ctx.tape.val(loss).v[0];
    if (!std::isfinite(lv))
      throw NumericError("trainer: non-finite loss at step " +
                         std::to_string(step_ + 1));
    ctx.tape.backward(loss);
    opt_.step(model_.store, ctx.collect_grads());
    ++step_;
    return {step_, lv, opt_.lr, idx, ex.q};
  }

  size_t train_step() const { return step_; }
  void set_train_step(size_t s) { step_ = s; }
  size_t num_scenes() const { return items_.size(); }
  AdamW& optimizer() { return opt_; }
  const AdamW& optimizer() const { return opt_; }

 private:
  struct Example {
    ModelFeatures feats;
    std::vector<double> target;
    size_t q = 0;
  };

  const Example& example(size_t idx) {
    if (!cache_[idx]) {
      const TrainItem& it = items_[idx];
      const size_t len = it.mixture[0].size();
      size_t off = 0, n = len;
      if (tc_.crop_samples > 0 && tc_.crop_samples < len) {
        n = tc_.crop_samples;
        off = Rng(tc_.seed).fork(idx).randint(len - n + 1);
      }
      std::vector<std::vector<double>> mix(it.mixture.size());
      for (size_t c = 0; c < mix.size(); ++c)
        mix[c].assign(it.mixture[c].begin() + static_cast<std::ptrdiff_t>(off),
                      it.mixture[c].begin() + static_cast<std::ptrdiff_t>(off + n));
      auto ex = std::make_unique<Example>();
      ex->feats = compute_model_features(model_, mix, it.query);
      ex->target.assign(it.target.begin() + static_cast<std::ptrdiff_t>(off),
                        it.target.begin() + static_cast<std::ptrdiff_t>(off + n));
      ex->q = it.q;
      cache_[idx] = std::move(ex);
    }
    return *cache_[idx];
  }

  Model& model_;
  std::vector<TrainItem> items_;
  TrainConfig tc_;
  AdamW opt_;
  size_t step_ = 0;
  std::vector<std::unique_ptr<Example>> cache_;
};

// ---- checkpointing ----

constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline void wr_bytes(std::ofstream& f, const void* p, size_t n) {
  f.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
}
inline void wr_u32(std::ofstream& f, uint32_t v) { wr_bytes(f, &v, 4); }
inline void wr_u64(std::ofstream& f, uint64_t v) { wr_bytes(f, &v, 8); }

inline void rd_bytes(std::ifstream& f, void* p, size_t n, const char* what) {
  f.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(f.gcount()) != n)
    throw DataError(std::string("checkpoint: truncated ") + what);
}
inline uint32_t rd_u32(std::ifstream& f, const char* what) {
  uint32_t v = 0;
  rd_bytes(f, &v, 4, what);
  return v;
}
inline uint64_t rd_u64(std::ifstream& f, const char* what) {
  uint64_t v = 0;
  rd_bytes(f, &v, 8, what);
  return v;
}

inline void wr_tensor(std::ofstream& f, uint8_t kind, const std::string& name,
                      const Tensor& t) {
  f.put(static_cast<char>(kind));
  wr_u32(f, static_cast<uint32_t>(name.size()));
  wr_bytes(f, name.data(), name.size());
  wr_u32(f, static_cast<uint32_t>(t.shape.size()));
  for (size_t d : t.shape) wr_u64(f, d);
  wr_u64(f, t.numel());
  wr_bytes(f, t.v.data(), t.numel() * sizeof(double));
}

}  // namespace detail

// Versioned binary container: magic + version, a JSON header with the model
// configuration and training step, then named f64 tensors (parameters,
// normalization buffers, and optionally the optimizer moments).
inline void save_checkpoint(const std::string& path, const Model& m,
                            const AdamW* opt = nullptr, size_t train_step = 0) {
  nlohmann::json hdr;
  hdr["model"] = m.cfg;
  hdr["train_step"] = train_step;
  hdr["has_opt"] = opt != nullptr;
  if (opt) {
    hdr["opt"] = {{"lr", opt->lr},       {"beta1", opt->beta1},
                  {"beta2", opt->beta2}, {"eps", opt->eps},
                  {"weight_decay", opt->weight_decay},
                  {"step_count", opt->step_count}};
  }
  const std::string hs = hdr.dump();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write checkpoint: " + tmp);
    detail::wr_bytes(f, "RSEC", 4);
    detail::wr_u32(f, kCheckpointVersion);
    detail::wr_u64(f, hs.size());
    detail::wr_bytes(f, hs.data(), hs.size());
    uint64_t count = m.store.params.size() + m.store.buffers.size();
    if (opt) count += opt->m.size() + opt->v.size();
    detail::wr_u64(f, count);
    for (const auto& [name, t] : m.store.params) detail::wr_tensor(f, 0, name, t);
    for (const auto& [name, t] : m.store.buffers) detail::wr_tensor(f, 1, name, t);
    if (opt) {
      for (const auto& [name, t] : opt->m) detail::wr_tensor(f, 2, name, t);
      for (const auto& [name, t] : opt->v) detail::wr_tensor(f, 3, name, t);
    }
    if (!f) throw DataError("short write on checkpoint: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw DataError("cannot rename checkpoint into place: " + path);
}

inline Model load_checkpoint(const std::string& path, AdamW* opt = nullptr,
                             size_t* train_step = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  detail::rd_bytes(f, magic, 4, "magic");
  if (std::memcmp(magic, "RSEC", 4) != 0)
    throw DataError("not a checkpoint file: " + path);
  const uint32_t version = detail::rd_u32(f, "version");
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version) +
                    " (reader supports " + std::to_string(kCheckpointVersion) + ")");
  const uint64_t hlen = detail::rd_u64(f, "header length");
  std::string hs(hlen, '\0');
  detail::rd_bytes(f, hs.data(), hlen, "header");
  nlohmann::json hdr;
  try {
    hdr = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad header: ") + e.what());
  }
  ModelConfig cfg;
  bool has_opt = false;
  size_t step = 0;
  try {
    cfg = hdr.at("model").get<ModelConfig>();
    step = hdr.at("train_step").get<size_t>();
    has_opt = hdr.at("has_opt").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad header: ") + e.what());
  }

  Model m(cfg, 0);
  std::map<std::string, bool> filled;
  for (const auto& [name, t] : m.store.params) filled[name] = false;
  const uint64_t count = detail::rd_u64(f, "tensor count");
  for (uint64_t i = 0; i < count; ++i) {
    char kind = 0;
    detail::rd_bytes(f, &kind, 1, "tensor kind");
    const uint32_t nlen = detail::rd_u32(f, "name length");
    std::string name(nlen, '\0');
    detail::rd_bytes(f, name.data(), nlen, "tensor name");
    const uint32_t rank = detail::rd_u32(f, "rank");
    std::vector<size_t> shape(rank);
    for (uint32_t d = 0; d < rank; ++d)
      shape[d] = static_cast<size_t>(detail::rd_u64(f, "dimension"));
    const uint64_t numel = detail::rd_u64(f, "element count");
    if (numel != Tensor::numel_of(shape))
      throw DataError("checkpoint: shape/count mismatch for tensor '" + name + "'");
    Tensor t(shape);
    detail::rd_bytes(f, t.v.data(), numel * sizeof(double), "tensor data");
    switch (kind) {
      case 0: {
        auto it = m.store.params.find(name);
        if (it == m.store.params.end())
          throw DataError("checkpoint: unknown parameter '" + name + "'");
        if (!it->second.same_shape(t))
          throw DataError("checkpoint: shape mismatch for parameter '" + name + "'");
        it->second = std::move(t);
        filled[name] = true;
        break;
      }
      case 1:
        m.store.buffers[name] = std::move(t);
        break;
      case 2:
        if (opt) opt->m[name] = std::move(t);
        break;
      case 3:
        if (opt) opt->v[name] = std::move(t);
        break;
      default:
        throw DataError("checkpoint: unknown tensor kind");
    }
  }
  for (const auto& [name, ok] : filled)
    if (!ok) throw DataError("checkpoint: missing parameter '" + name + "'");
  if (opt && has_opt) {
    try {
      const auto& o = hdr.at("opt");
      opt->lr = o.at("lr").get<double>();
      opt->beta1 = o.at("beta1").get<double>();
      opt->beta2 = o.at("beta2").get<double>();
      opt->eps = o.at("eps").get<double>();
      opt->weight_decay = o.at("weight_decay").get<double>();
      opt->step_count = o.at("step_count").get<int64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("checkpoint: bad optimizer header: ") + e.what());
    }
  }
  if (train_step) *train_step = step;
  return m;
}

}  // namespace rse

#endif  // RSE_MODEL_HPP_
