// Copyright 2026 The RSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef RSE_LAYERS_HPP_
#define RSE_LAYERS_HPP_

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rse/autodiff.hpp"
#include "rse/tensor.hpp"
#include "rse/util.hpp"

namespace rse {

// Named parameter tensors plus non-trainable buffers (running statistics).
struct ParamStore {
  std::map<std::string, Tensor> params;
  std::map<std::string, Tensor> buffers;

  Tensor& create(const std::string& name, Tensor t) {
    if (params.count(name)) throw ConfigError("duplicate parameter: " + name);
    return params[name] = std::move(t);
  }
  Tensor& param(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  const Tensor& param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  Tensor& buffer(const std::string& name) {
    auto it = buffers.find(name);
    if (it == buffers.end()) throw ConfigError("unknown buffer: " + name);
    return it->second;
  }

  size_t num_params() const {
    size_t n = 0;
    for (const auto& [k, t] : params) n += t.numel();
    return n;
  }
};

// One forward pass: a tape bound to a parameter store. Parameters become
// tape leaves on first use so their gradients can be collected by name.
struct TapeCtx {
  Tape tape;
  ParamStore* store = nullptr;
  bool training = true;

  explicit TapeCtx(ParamStore* s, bool train = true) : store(s), training(train) {}
  TapeCtx(const TapeCtx&) = delete;

  int param(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const int id = tape.leaf(store->param(name));
    bound_[name] = id;
    return id;
  }

  int constant(Tensor t) { return tape.constant(std::move(t)); }

  const std::map<std::string, int>& bound_params() const { return bound_; }

  // Gradients of the most recent backward() for every bound parameter.
  std::map<std::string, Tensor> collect_grads() const {
    std::map<std::string, Tensor> g;
    for (const auto& [name, id] : bound_) g[name] = tape.grad(id);
    return g;
  }

 private:
  std::map<std::string, int> bound_;
};

// ---- parameter initialization ----

inline void init_linear(ParamStore& s, const std::string& prefix, size_t in,
                        size_t out, Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(in));
  s.create(prefix + ".w", Tensor::uniform(in, out, a, rng));
  s.create(prefix + ".b", Tensor::uniform(1, out, a, rng));
}

inline void init_norm(ParamStore& s, const std::string& prefix, size_t c,
                      bool with_running = false) {
  s.create(prefix + ".gamma", Tensor::full(1, c, 1.0));
  s.create(prefix + ".beta", Tensor::zeros(1, c));
  if (with_running) {
    s.buffers[prefix + ".running_mean"] = Tensor::zeros(1, c);
    s.buffers[prefix + ".running_var"] = Tensor::full(1, c, 1.0);
  }
}

inline void init_lstm(ParamStore& s, const std::string& prefix, size_t in,
                      size_t hidden, Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(hidden));
  s.create(prefix + ".wx", Tensor::uniform(in, 4 * hidden, a, rng));
  s.create(prefix + ".wh", Tensor::uniform(hidden, 4 * hidden, a, rng));
  Tensor b = Tensor::uniform(1, 4 * hidden, a, rng);
  for (size_t j = hidden; j < 2 * hidden; ++j) b.v[j] += 1.0;  // forget gate bias
  s.create(prefix + ".b", std::move(b));
}

// ---- layer forward passes ----

inline int linear(TapeCtx& ctx, int x, const std::string& prefix) {
  return ctx.tape.add_rowvec(ctx.tape.matmul(x, ctx.param(prefix + ".w")),
                             ctx.param(prefix + ".b"));
}

constexpr double kNormEps = 1e-5;
constexpr double kBnMomentum = 0.9;  // keep fraction of the old running stat

// Batch normalization over rows (each column is a channel). Training mode
// uses batch statistics and updates the running buffers; inference mode
// normalizes with the stored running statistics so the output at frame t
// depends only on inputs at frames <= t.
inline int batchnorm(TapeCtx& ctx, int x, const std::string& prefix) {
  Tape& tp = ctx.tape;
  const size_t c = tp.val(x).cols();
  int normed;
  if (ctx.training) {
    const int mu = tp.mean_rows(x);
    const int xc = tp.sub_rowvec(x, mu);
    const int var = tp.mean_rows(tp.mul(xc, xc));
    const int rstd = tp.recip_op(tp.sqrt_op(tp.add_scalar(var, kNormEps)));
    normed = tp.mul_rowvec(xc, rstd);
    // running-stat update is a side effect outside the graph
    Tensor& rm = ctx.store->buffer(prefix + ".running_mean");
    Tensor& rv = ctx.store->buffer(prefix + ".running_var");
    for (size_t j = 0; j < c; ++j) {
      rm.v[j] = kBnMomentum * rm.v[j] + (1.0 - kBnMomentum) * tp.val(mu).v[j];
      rv.v[j] = kBnMomentum * rv.v[j] + (1.0 - kBnMomentum) * tp.val(var).v[j];
    }
  } else {
    const Tensor& rm = ctx.store->buffer(prefix + ".running_mean");
    const Tensor& rv = ctx.store->buffer(prefix + ".running_var");
    Tensor scale(1, c);
    for (size_t j = 0; j < c; ++j) scale.v[j] = 1.0 / std::sqrt(rv.v[j] + kNormEps);
    const int xc = tp.sub_rowvec(x, tp.constant(rm));
    normed = tp.mul_rowvec(xc, tp.constant(std::move(scale)));
  }
  const int scaled = tp.mul_rowvec(normed, ctx.param(prefix + ".gamma"));
  return tp.add_rowvec(scaled, ctx.param(prefix + ".beta"));
}

// Layer normalization over the feature (column) dimension of each row.
inline int layernorm(TapeCtx& ctx, int x, const std::string& prefix) {
  Tape& tp = ctx.tape;
  const int mu = tp.mean_cols(x);
  const int xc = tp.sub_colvec(x, mu);
  const int var = tp.mean_cols(tp.mul(xc, xc));
  const int rstd = tp.recip_op(tp.sqrt_op(tp.add_scalar(var, kNormEps)));
  const int normed = tp.mul_colvec(xc, rstd);
  const int scaled = tp.mul_rowvec(normed, ctx.param(prefix + ".gamma"));
  return tp.add_rowvec(scaled, ctx.param(prefix + ".beta"));
}

struct LstmState {
  int h = -1, c = -1;
};

// One LSTM step; gates ordered (input, forget, cell, output).
inline LstmState lstm_step(TapeCtx& ctx, int x, const LstmState& s,
                           const std::string& prefix, size_t hidden) {
  Tape& tp = ctx.tape;
  const int z = tp.add_rowvec(tp.add(tp.matmul(x, ctx.param(prefix + ".wx")),
                                     tp.matmul(s.h, ctx.param(prefix + ".wh"))),
                              ctx.param(prefix + ".b"));
  const int gi = tp.sigmoid_op(tp.slice_cols(z, 0, hidden));
  const int gf = tp.sigmoid_op(tp.slice_cols(z, hidden, 2 * hidden));
  const int gc = tp.tanh_op(tp.slice_cols(z, 2 * hidden, 3 * hidden));
  const int go = tp.sigmoid_op(tp.slice_cols(z, 3 * hidden, 4 * hidden));
  LstmState out;
  out.c = tp.add(tp.mul(gf, s.c), tp.mul(gi, gc));
  out.h = tp.mul(go, tp.tanh_op(out.c));
  return out;
}

// Unidirectional LSTM over a step sequence; returns hidden state per step.
inline std::vector<int> lstm(TapeCtx& ctx, const std::vector<int>& xs,
                             const std::string& prefix, size_t hidden) {
  if (xs.empty()) throw NumericError("lstm: empty sequence");
  const size_t batch = ctx.tape.val(xs[0]).rows();
  LstmState s;
  s.h = ctx.constant(Tensor(batch, hidden));
  s.c = ctx.constant(Tensor(batch, hidden));
  std::vector<int> hs;
  hs.reserve(xs.size());
  for (int x : xs) {
    s = lstm_step(ctx, x, s, prefix, hidden);
    hs.push_back(s.h);
  }
  return hs;
}

// Bidirectional LSTM; per-step output is [forward | backward] concatenated.
inline std::vector<int> bilstm(TapeCtx& ctx, const std::vector<int>& xs,
                               const std::string& prefix, size_t hidden) {
  const auto hf = lstm(ctx, xs, prefix + ".fwd", hidden);
  std::vector<int> rev(xs.rbegin(), xs.rend());
  const auto hb_rev = lstm(ctx, rev, prefix + ".bwd", hidden);
  std::vector<int> out(xs.size());
  for (size_t t = 0; t < xs.size(); ++t)
    out[t] = ctx.tape.concat_cols({hf[t], hb_rev[xs.size() - 1 - t]});
  return out;
}

// Gated linear unit over the column dimension: first half * sigmoid(second).
inline int glu(TapeCtx& ctx, int x) {
  Tape& tp = ctx.tape;
  const size_t n = tp.val(x).cols();
  if (n % 2 != 0) throw NumericError("glu: odd width");
  const int a = tp.slice_cols(x, 0, n / 2);
  const int b = tp.slice_cols(x, n / 2, n);
  return tp.mul(a, tp.sigmoid_op(b));
}

// ---- optimizer ----

// AdamW with decoupled weight decay and a stepped learning-rate schedule
// (applied by the caller via set_lr).
struct AdamW {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int64_t step_count = 0;
  std::map<std::string, Tensor> m, v;

  void step(ParamStore& store, const std::map<std::string, Tensor>& grads) {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (auto& [name, p] : store.params) {
      auto git = grads.find(name);
      const Tensor* g = git != grads.end() ? &git->second : nullptr;
      if (g && !all_finite(g->v))
        throw NumericError("non-finite gradient in parameter block '" + name +
                           "' at step " + std::to_string(step_count));
      Tensor& mm = m.try_emplace(name, Tensor(p.shape)).first->second;
      Tensor& vv = v.try_emplace(name, Tensor(p.shape)).first->second;
      for (size_t i = 0; i < p.numel(); ++i) {
        const double gi = g ? g->v[i] : 0.0;
        mm.v[i] = beta1 * mm.v[i] + (1.0 - beta1) * gi;
        vv.v[i] = beta2 * vv.v[i] + (1.0 - beta2) * gi * gi;
        const double mhat = mm.v[i] / bc1;
        const double vhat = vv.v[i] / bc2;
        p.v[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p.v[i]);
      }
    }
  }
};

}  // namespace rse

#endif  // RSE_LAYERS_HPP_
