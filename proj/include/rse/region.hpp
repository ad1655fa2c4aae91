// Copyright 2026 The RSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Region conditioning: azimuth view sampling inside a query window, the
// per-subband aggregation of per-view direction features into a fixed-width
// region descriptor, and the distance embedding generator for distance-
// bounded queries.

#ifndef RSE_REGION_HPP_
#define RSE_REGION_HPP_

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "rse/geometry.hpp"
#include "rse/layers.hpp"
#include "rse/util.hpp"

namespace rse {

// ---- view sampling ----

enum class SamplingMode { FixedNumber, FixedInterval };

struct SamplingStrategy {
  SamplingMode mode = SamplingMode::FixedNumber;
  size_t num_views = 8;        // FixedNumber
  double interval_deg = 15.0;  // FixedInterval

  static SamplingStrategy fixed_number(size_t n) {
    SamplingStrategy s;
    s.mode = SamplingMode::FixedNumber;
    s.num_views = n;
    return s;
  }
  static SamplingStrategy fixed_interval(double d) {
    SamplingStrategy s;
    s.mode = SamplingMode::FixedInterval;
    s.interval_deg = d;
    return s;
  }

  void validate() const {
    if (mode == SamplingMode::FixedNumber && num_views < 2)
      throw ConfigError("sampling: need at least 2 views");
    if (mode == SamplingMode::FixedInterval && !(interval_deg > 0.0))
      throw ConfigError("sampling: interval must be positive");
  }
};

// Azimuths (degrees, wrapped to [-180, 180)) sampled across the query's
// azimuth window. FixedNumber spaces N views evenly including both edges;
// FixedInterval starts at the lower edge and steps by the interval.
inline std::vector<double> sample_directions(const QueryRegion& region,
                                             const SamplingStrategy& strategy) {
  strategy.validate();
  region.validate();
  const double lo = region.az_lo, w = region.az_width();
  std::vector<double> out;
  if (strategy.mode == SamplingMode::FixedNumber) {
    const size_t n = strategy.num_views;
    for (size_t i = 1; i <= n; ++i)
      out.push_back(lo + (static_cast<double>(i) - 1.0) * w / (static_cast<double>(n) - 1.0));
  } else {
    const size_t n = static_cast<size_t>(std::floor(w / strategy.interval_deg)) + 1;
    for (size_t i = 1; i <= n; ++i)
      out.push_back(lo + (static_cast<double>(i) - 1.0) * strategy.interval_deg);
  }
  for (double& az : out) az = wrap_deg(az);
  return out;
}

// Elevation at which views are steered: the window midpoint.
inline double view_elevation(const QueryRegion& region) {
  return 0.5 * (region.el_lo + region.el_hi);
}

// Sort key for sequence-style aggregation: the mean signed path-length
// difference across pairs for the view direction.
inline std::vector<double> view_sort_keys(const std::vector<MicPair>& pairs,
                                          const std::vector<double>& azimuths,
                                          double elevation_deg) {
  std::vector<double> keys(azimuths.size(), 0.0);
  for (size_t i = 0; i < azimuths.size(); ++i) {
    double s = 0.0;
    for (const auto& p : pairs) s += tdoa_distance(p, azimuths[i], elevation_deg);
    keys[i] = s / static_cast<double>(pairs.size());
  }
  return keys;
}

// Stable order of views by sort key (index tiebreak keeps this deterministic
// even for symmetric arrays where keys collide).
inline std::vector<size_t> view_order(const std::vector<double>& keys) {
  std::vector<size_t> idx(keys.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](size_t a, size_t b) { return keys[a] < keys[b]; });
  return idx;
}

// ---- aggregation ----

enum class AggMethod { Concatenate, TAC, TAA, RNN, RNNLoop };

inline AggMethod agg_method_from_string(const std::string& s) {
  if (s == "concat") return AggMethod::Concatenate;
  if (s == "tac") return AggMethod::TAC;
  if (s == "taa") return AggMethod::TAA;
  if (s == "rnn") return AggMethod::RNN;
  if (s == "rnn-loop") return AggMethod::RNNLoop;
  throw ConfigError("unknown aggregation method: " + s);
}

inline std::string agg_method_name(AggMethod m) {
  switch (m) {
    case AggMethod::Concatenate: return "concat";
    case AggMethod::TAC: return "tac";
    case AggMethod::TAA: return "taa";
    case AggMethod::RNN: return "rnn";
    case AggMethod::RNNLoop: return "rnn-loop";
  }
  return "?";
}

// Region descriptor width per subband for N views of bandwidth bw.
inline size_t agg_dim(AggMethod m, size_t num_views, size_t bw, size_t p) {
  switch (m) {
    case AggMethod::Concatenate: return num_views * bw;
    case AggMethod::TAC: return num_views * p;
    case AggMethod::TAA: return p;
    case AggMethod::RNN: return p;
    case AggMethod::RNNLoop: return 2 * p;
  }
  return 0;
}

inline void init_agg_band(ParamStore& store, const std::string& prefix, AggMethod m,
                          size_t bw, size_t p, Rng& rng) {
  switch (m) {
    case AggMethod::Concatenate:
      break;  // parameter-free
    case AggMethod::TAC:
    case AggMethod::TAA:
      // shared per-view two-layer perceptron bw -> p -> p
      init_linear(store, prefix + ".fc1", bw, p, rng);
      init_linear(store, prefix + ".fc2", p, p, rng);
      break;
    case AggMethod::RNN:
    case AggMethod::RNNLoop:
      init_lstm(store, prefix + ".lstm", bw, p, rng);
      break;
  }
}

// Shared view MLP used by TAC and TAA.
inline int agg_view_mlp(TapeCtx& ctx, int view, const std::string& prefix) {
  const int h = ctx.tape.tanh_op(linear(ctx, view, prefix + ".fc1"));
  return linear(ctx, h, prefix + ".fc2");
}

// Aggregate per-view subband features (each [T, bw]) into one region
// descriptor [T, agg_dim]. sort_keys orders the view sequence for the
// RNN-style methods; it must align with `views`.
inline int agg_band(TapeCtx& ctx, const std::vector<int>& views, AggMethod method,
                    const std::string& prefix, size_t p,
                    const std::vector<double>& sort_keys) {
  if (views.empty()) throw ConfigError("agg_band: no views");
  Tape& tp = ctx.tape;
  switch (method) {
    case AggMethod::Concatenate:
      return tp.concat_cols(views);
    case AggMethod::TAC: {
      std::vector<int> mapped;
      mapped.reserve(views.size());
      for (int v : views) mapped.push_back(agg_view_mlp(ctx, v, prefix));
      return tp.concat_cols(mapped);
    }
    case AggMethod::TAA: {
      int acc = agg_view_mlp(ctx, views[0], prefix);
      for (size_t i = 1; i < views.size(); ++i)
        acc = tp.add(acc, agg_view_mlp(ctx, views[i], prefix));
      return tp.scale(acc, 1.0 / static_cast<double>(views.size()));
    }
    case AggMethod::RNN:
    case AggMethod::RNNLoop: {
      if (sort_keys.size() != views.size())
        throw ConfigError("agg_band: sort keys must align with views");
      const auto order = view_order(sort_keys);
      std::vector<int> seq;
      seq.reserve(views.size() + 1);
      for (size_t i : order) seq.push_back(views[i]);
      if (method == AggMethod::RNNLoop) seq.push_back(seq.front());  // close the loop
      const auto hs = lstm(ctx, seq, prefix + ".lstm", p);
      if (method == AggMethod::RNN) return hs.back();
      return tp.concat_cols({hs[hs.size() - 2], hs[hs.size() - 1]});
    }
  }
  throw ConfigError("agg_band: bad method");
}

// Standalone (non-tape) convenience used by tests and tooling.
inline Tensor aggregate(const std::vector<Tensor>& views, AggMethod method,
                        ParamStore& store, const std::string& prefix, size_t p,
                        const std::vector<double>& sort_keys) {
  TapeCtx ctx(&store, false);
  std::vector<int> ids;
  ids.reserve(views.size());
  for (const auto& v : views) ids.push_back(ctx.constant(v));
  return ctx.tape.val(agg_band(ctx, ids, method, prefix, p, sort_keys));
}

// ---- distance embedding generator ----

constexpr double kDistEmbedLo = 0.2;
constexpr double kDistEmbedHi = 2.0;
constexpr size_t kDegHidden = 32;

inline void init_distance_embedding(ParamStore& store, const std::string& prefix,
                                    size_t p, Rng& rng) {
  init_linear(store, prefix + ".fc1", 1, kDegHidden, rng);
  init_linear(store, prefix + ".fc2", kDegHidden, kDegHidden, rng);
  init_linear(store, prefix + ".fc3", kDegHidden, p, rng);
}

// Clamp a query distance into the supported range, warning once per call.
inline double clamp_embed_distance(double d) {
  if (d < kDistEmbedLo || d > kDistEmbedHi) {
    const double c = std::clamp(d, kDistEmbedLo, kDistEmbedHi);
    std::fprintf(stderr,
                 "warning: distance threshold %.3f m outside supported range "
                 "[%.1f, %.1f], clamped to %.3f\n",
                 d, kDistEmbedLo, kDistEmbedHi, c);
    return c;
  }
  return d;
}

// Embedding of a scalar distance threshold: [1,1] node -> [1,P] descriptor.
// Differentiable in both the parameters and the distance input.
inline int distance_embedding(TapeCtx& ctx, int d_node, const std::string& prefix) {
  const int h1 = ctx.tape.tanh_op(linear(ctx, d_node, prefix + ".fc1"));
  const int h2 = ctx.tape.tanh_op(linear(ctx, h1, prefix + ".fc2"));
  return linear(ctx, h2, prefix + ".fc3");
}

inline Tensor distance_embedding_value(double d, ParamStore& store,
                                       const std::string& prefix) {
  TapeCtx ctx(&store, false);
  const int dn = ctx.constant(Tensor::scalar(clamp_embed_distance(d)));
  return ctx.tape.val(distance_embedding(ctx, dn, prefix));
}

}  // namespace rse

#endif  // RSE_REGION_HPP_
