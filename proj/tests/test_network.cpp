// Copyright 2026 The RSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "rse/model.hpp"
#include "testutil.hpp"

using namespace rse;
using rse::test::max_abs_diff;
using rse::test::random_signal;

namespace {

// Small analysis grid so toy forward passes stay cheap: 65 bins, 51 frames
// for a 0.1 s signal.
StftConfig tiny_stft() {
  StftConfig c;
  c.window_len = 128;
  c.hop = 32;
  c.fft_size = 128;
  return c;
}

ModelConfig toy_cfg(ModelVariant v, AggMethod agg = AggMethod::RNNLoop) {
  ModelConfig c = ModelConfig::preset("toy", v);
  c.array = MicArray::linear(3, 0.1);
  c.stft = tiny_stft();
  c.agg = agg;
  c.validate();
  return c;
}

std::vector<std::vector<double>> random_mix(size_t mics, size_t n, Rng& rng) {
  std::vector<std::vector<double>> mix(mics);
  for (auto& ch : mix) ch = random_signal(n, rng);
  return mix;
}

void randomize_params(Model& m, uint64_t seed, double scale = 0.4) {
  Rng rng(seed);
  for (auto& [name, t] : m.store.params)
    for (double& x : t.v) x = rng.uniform(-scale, scale);
}

void randomize_buffers(Model& m, uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, t] : m.store.buffers) {
    const bool is_var = name.size() > 3 && name.rfind("var") == name.size() - 3;
    for (double& x : t.v) x = is_var ? rng.uniform(0.5, 1.5) : rng.uniform(-0.3, 0.3);
  }
}

double eval_model_loss(Model& m, const ModelFeatures& ft,
                       const std::vector<double>& target, size_t q) {
  TapeCtx ctx(&m.store, true);
  const ModelForward f = model_forward(ctx, m, ft);
  return ctx.tape.val(model_loss(ctx, f, target, q)).v[0];
}

double fd_rel_err(double analytic, double fd) {
  return std::abs(analytic - fd) /
         std::max({std::abs(analytic), std::abs(fd), 1e-4});
}

// Central finite differences against the backpropagated gradient, up to three
// entries (first/middle/last) of every parameter tensor. A larger step is
// retried before failing: the difference quotient at 1e-5 can drown small
// gradients in rounding noise, and the tape contract allows perturbations up
// to 1e-2.
void check_model_gradients(Model& m, const ModelFeatures& ft,
                           const std::vector<double>& target, size_t q) {
  std::map<std::string, Tensor> analytic;
  double d_analytic = 0.0;
  bool has_d = false;
  {
    TapeCtx ctx(&m.store, true);
    const ModelForward f = model_forward(ctx, m, ft);
    const int loss = model_loss(ctx, f, target, q);
    ctx.tape.backward(loss);
    analytic = ctx.collect_grads();
    if (f.d_node >= 0) {
      d_analytic = ctx.tape.grad(f.d_node).v[0];
      has_d = true;
    }
  }
  size_t blocks_checked = 0;
  for (auto& [name, t] : m.store.params) {
    std::vector<size_t> picks = {0, t.numel() / 2, t.numel() - 1};
    std::sort(picks.begin(), picks.end());
    picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
    for (size_t i : picks) {
      const double a = analytic.at(name).v[i];
      double err = 1.0, fd = 0.0;
      for (double h : {1e-5, 1e-3}) {
        const double keep = t.v[i];
        t.v[i] = keep + h;
        const double lp = eval_model_loss(m, ft, target, q);
        t.v[i] = keep - h;
        const double lm = eval_model_loss(m, ft, target, q);
        t.v[i] = keep;
        fd = (lp - lm) / (2.0 * h);
        err = fd_rel_err(a, fd);
        if (err < 1e-4) break;
      }
      INFO(name << "[" << i << "]: analytic " << a << " fd " << fd);
      CHECK(err < 1e-4);
    }
    ++blocks_checked;
  }
  REQUIRE(blocks_checked == m.store.params.size());
  if (has_d) {
    const double h = 1e-5;
    ModelFeatures fp = ft, fm = ft;
    fp.dist += h;
    fm.dist -= h;
    const double fd =
        (eval_model_loss(m, fp, target, q) - eval_model_loss(m, fm, target, q)) /
        (2.0 * h);
    INFO("distance threshold: analytic " << d_analytic << " fd " << fd);
    CHECK(fd_rel_err(d_analytic, fd) < 1e-4);
  }
}

// Force mask == 1 + 0j everywhere: zero the mask head weights and pick biases
// whose gated output is exactly (1, 0). sigmoid(40) rounds to 1.0 in doubles.
void rig_allpass_mask(Model& m) {
  for (size_t k = 0; k < m.bands.num_bands(); ++k) {
    const std::string ks = std::to_string(k);
    const size_t bw = m.bands.width(k);
    Tensor& w = m.store.param("mask.fc2." + ks + ".w");
    Tensor& b = m.store.param("mask.fc2." + ks + ".b");
    for (double& x : w.v) x = 0.0;
    for (size_t j = 0; j < 4 * bw; ++j)
      b.v[j] = j < bw ? 1.0 : (j < 2 * bw ? 0.0 : 40.0);
  }
}

}  // namespace

TEST_CASE("parameter counts match the published preset sizes") {
  // Exact totals follow from the layer shapes; the published column gives the
  // +-10% envelope the constructed model must land in.
  const struct {
    const char* name;
    size_t exact;
    double published;
  } rows[] = {
      {"M", 2791784, 3.00e6},  {"S", 1791452, 1.88e6},  {"XS", 1239256, 1.20e6},
      {"XXS", 798560, 0.76e6}, {"XXXS", 462616, 0.43e6},
  };
  for (const auto& row : rows) {
    const Model m(ModelConfig::preset(row.name), 1);
    INFO("preset " << row.name);
    CHECK(m.num_params() == row.exact);
    CHECK(std::abs(static_cast<double>(m.num_params()) - row.published) /
              row.published <
          0.10);
  }
}

TEST_CASE("model initialization is seed-deterministic") {
  const ModelConfig cfg = toy_cfg(ModelVariant::Angle);
  const Model a(cfg, 42), b(cfg, 42), c(cfg, 43);
  REQUIRE(a.store.params.size() == b.store.params.size());
  bool all_equal = true, any_diff_seed = false;
  for (const auto& [name, t] : a.store.params) {
    all_equal = all_equal && t.v == b.store.params.at(name).v;
    any_diff_seed = any_diff_seed || t.v != c.store.params.at(name).v;
  }
  CHECK(all_equal);
  CHECK(any_diff_seed);
}

TEST_CASE("gradients match central finite differences (angle, recurrent agg)") {
  const ModelConfig cfg = toy_cfg(ModelVariant::Angle, AggMethod::RNNLoop);
  Model m(cfg, 7);
  Rng rng(100);
  const auto mix = random_mix(3, 1600, rng);
  const auto target = random_signal(1600, rng, 0.3);
  const ModelFeatures ft =
      compute_model_features(m, mix, QueryRegion::angular(-30.0, 40.0));
  check_model_gradients(m, ft, target, 1);
}

TEST_CASE("gradients match central finite differences (angle, mlp agg)") {
  const ModelConfig cfg = toy_cfg(ModelVariant::Angle, AggMethod::TAC);
  Model m(cfg, 8);
  Rng rng(101);
  const auto mix = random_mix(3, 1600, rng);
  const auto target = random_signal(1600, rng, 0.3);
  const ModelFeatures ft =
      compute_model_features(m, mix, QueryRegion::angular(10.0, 95.0));
  check_model_gradients(m, ft, target, 2);
}

TEST_CASE("gradients match central finite differences (distance, incl. threshold)") {
  const ModelConfig cfg = toy_cfg(ModelVariant::Distance);
  Model m(cfg, 9);
  Rng rng(102);
  const auto mix = random_mix(3, 1600, rng);
  const auto target = random_signal(1600, rng, 0.3);
  const ModelFeatures ft =
      compute_model_features(m, mix, QueryRegion::spherical(1.0));
  check_model_gradients(m, ft, target, 1);
}

TEST_CASE("sparsity-branch gradients match finite differences on probe entries") {
  const ModelConfig cfg = toy_cfg(ModelVariant::Angle, AggMethod::TAC);
  Model m(cfg, 12);
  Rng rng(103);
  const auto mix = random_mix(3, 1600, rng);
  const std::vector<double> target(1600, 0.0);
  const ModelFeatures ft =
      compute_model_features(m, mix, QueryRegion::angular(-80.0, -20.0));
  std::map<std::string, Tensor> analytic;
  {
    TapeCtx ctx(&m.store, true);
    const ModelForward f = model_forward(ctx, m, ft);
    const int loss = model_loss(ctx, f, target, 0);
    ctx.tape.backward(loss);
    analytic = ctx.collect_grads();
  }
  // the absolute-value kink makes dense probing fragile; spot entries across
  // every stage with a small step instead
  const std::vector<std::pair<std::string, size_t>> probes = {
      {"split.spec.fc0.w", 0},       {"split.spec.bn1.beta", 0},
      {"split.spat.fc2.w", 40},      {"agg.band0.fc1.w", 5},
      {"agg.band3.fc2.b", 1},        {"split.reg.fc1.w", 7},
      {"block0.time.lstm.wx", 30},   {"block1.band.lstm.bwd.wh", 11},
      {"block0.band.fc.w", 0},       {"mask.bn2.gamma", 3},
      {"mask.fc1.1.w", 20},          {"mask.fc2.3.b", 2},
  };
  for (const auto& [name, i] : probes) {
    Tensor& t = m.store.params.at(name);
    const size_t idx = std::min(i, t.numel() - 1);
    const double a = analytic.at(name).v[idx];
    double err = 1.0, fd = 0.0;
    for (double h : {1e-7, 1e-6, 1e-5}) {
      const double keep = t.v[idx];
      t.v[idx] = keep + h;
      const double lp = eval_model_loss(m, ft, target, 0);
      t.v[idx] = keep - h;
      const double lm = eval_model_loss(m, ft, target, 0);
      t.v[idx] = keep;
      fd = (lp - lm) / (2.0 * h);
      err = fd_rel_err(a, fd);
      if (err < 1e-4) break;
    }
    INFO(name << "[" << idx << "]: analytic " << a << " fd " << fd);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("constant input reduces fusion to its bias terms") {
  // With every row of a path's input identical, training-mode batch norm
  // outputs beta exactly, so each path contributes beta @ W + b and the fused
  // rows equal the sum over the three paths. A zero mixture produces such
  // constant features (zero spectra, constant phase features).
  ModelConfig cfg = toy_cfg(ModelVariant::Angle, AggMethod::Concatenate);
  Model m(cfg, 5);
  randomize_params(m, 99, 0.5);
  const std::vector<std::vector<double>> mix(3, std::vector<double>(1600, 0.0));
  const ModelFeatures ft =
      compute_model_features(m, mix, QueryRegion::angular(-45.0, 45.0));
  TapeCtx ctx(&m.store, true);
  const auto fused = band_split_fuse(ctx, m, ft);
  for (size_t k = 0; k < m.bands.num_bands(); ++k) {
    const std::string ks = std::to_string(k);
    std::vector<double> expect(m.cfg.hidden, 0.0);
    for (const auto& [bn, fc] :
         {std::pair<std::string, std::string>{"split.spec.bn" + ks, "split.spec.fc" + ks},
          {"split.spat.bn" + ks, "split.spat.fc" + ks},
          {"split.reg.bn" + ks, "split.reg.fc" + ks}}) {
      const Tensor& beta = m.store.param(bn + ".beta");
      const Tensor& w = m.store.param(fc + ".w");
      const Tensor& b = m.store.param(fc + ".b");
      for (size_t h = 0; h < m.cfg.hidden; ++h) {
        double acc = b.v[h];
        for (size_t c = 0; c < beta.numel(); ++c) acc += beta.v[c] * w.at(c, h);
        expect[h] += acc;
      }
    }
    const Tensor& fv = ctx.tape.val(fused[k]);
    double worst = 0.0;
    for (size_t r = 0; r < fv.rows(); ++r)
      for (size_t h = 0; h < fv.cols(); ++h)
        worst = std::max(worst, std::abs(fv.at(r, h) - expect[h]));
    INFO("band " << k);
    CHECK(worst < 1e-8);
  }
}

TEST_CASE("spectral path is affine in inference mode") {
  // Stored-statistics normalization makes each path affine, so
  // f(X1 + X2) = f(X1) + f(X2) - f(0) when only the spectral features change.
  ModelConfig cfg = toy_cfg(ModelVariant::Angle, AggMethod::Concatenate);
  Model m(cfg, 6);
  randomize_params(m, 77);
  randomize_buffers(m, 78);
  Rng rng(200);
  const auto mix = random_mix(3, 1600, rng);
  const ModelFeatures base =
      compute_model_features(m, mix, QueryRegion::angular(0.0, 60.0));
  ModelFeatures f1 = base, f2 = base, f12 = base, f0 = base;
  for (size_t k = 0; k < m.bands.num_bands(); ++k) {
    const size_t r = base.spec[k].rows(), c = base.spec[k].cols();
    f1.spec[k] = rse::test::random_tensor(r, c, rng);
    f2.spec[k] = rse::test::random_tensor(r, c, rng);
    f12.spec[k] = Tensor(r, c);
    for (size_t i = 0; i < f12.spec[k].numel(); ++i)
      f12.spec[k].v[i] = f1.spec[k].v[i] + f2.spec[k].v[i];
    f0.spec[k] = Tensor(r, c);
  }
  auto fuse_vals = [&](const ModelFeatures& ft) {
    TapeCtx ctx(&m.store, false);
    const auto ids = band_split_fuse(ctx, m, ft);
    std::vector<Tensor> out;
    for (int id : ids) out.push_back(ctx.tape.val(id));
    return out;
  };
  const auto v1 = fuse_vals(f1), v2 = fuse_vals(f2), v12 = fuse_vals(f12),
             v0 = fuse_vals(f0);
  for (size_t k = 0; k < v12.size(); ++k) {
    double worst = 0.0;
    for (size_t i = 0; i < v12[k].numel(); ++i)
      worst = std::max(worst, std::abs(v12[k].v[i] -
                                       (v1[k].v[i] + v2[k].v[i] - v0[k].v[i])));
    INFO("band " << k);
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("mask application and synthesis are linear in the mask") {
  const StftConfig cfg = tiny_stft();
  Rng rng(300);
  const size_t n = 1600, frames = cfg.num_frames(n), bins = cfg.num_bins();
  const Tensor yre = rse::test::random_tensor(frames, bins, rng);
  const Tensor yim = rse::test::random_tensor(frames, bins, rng);
  const Tensor m1r = rse::test::random_tensor(frames, bins, rng);
  const Tensor m1i = rse::test::random_tensor(frames, bins, rng);
  const Tensor m2r = rse::test::random_tensor(frames, bins, rng);
  const Tensor m2i = rse::test::random_tensor(frames, bins, rng);
  auto synth = [&](const Tensor& mr, const Tensor& mi) {
    Tape tp;
    const int y_re = tp.constant(yre), y_im = tp.constant(yim);
    const int k_re = tp.constant(mr), k_im = tp.constant(mi);
    const int zre = tp.sub(tp.mul(k_re, y_re), tp.mul(k_im, y_im));
    const int zim = tp.add(tp.mul(k_re, y_im), tp.mul(k_im, y_re));
    return tp.val(synthesis_node(tp, zre, zim, cfg, n)).v;
  };
  const double a = 0.7, b = -1.3;
  Tensor mr(frames, bins), mi(frames, bins);
  for (size_t i = 0; i < mr.numel(); ++i) {
    mr.v[i] = a * m1r.v[i] + b * m2r.v[i];
    mi.v[i] = a * m1i.v[i] + b * m2i.v[i];
  }
  const auto w1 = synth(m1r, m1i), w2 = synth(m2r, m2i), wc = synth(mr, mi);
  double worst = 0.0;
  for (size_t i = 0; i < n; ++i)
    worst = std::max(worst, std::abs(wc[i] - (a * w1[i] + b * w2[i])));
  CHECK(worst < 1e-10);
}

TEST_CASE("inference output is causal in the input") {
  ModelConfig cfg = toy_cfg(ModelVariant::Angle);
  Model m(cfg, 31);
  randomize_params(m, 310, 0.3);
  randomize_buffers(m, 311);
  Rng rng(312);
  const size_t n = 1600, s0 = 800;
  auto mix1 = random_mix(3, n, rng);
  auto mix2 = mix1;
  for (auto& ch : mix2)
    for (size_t t = s0; t < n; ++t) ch[t] += rng.uniform(-0.5, 0.5);
  const QueryRegion q = QueryRegion::angular(-60.0, 10.0);
  const ModelFeatures ft1 = compute_model_features(m, mix1, q);
  const ModelFeatures ft2 = compute_model_features(m, mix2, q);

  TapeCtx c1(&m.store, false), c2(&m.store, false);
  const ModelForward o1 = model_forward(c1, m, ft1);
  const ModelForward o2 = model_forward(c2, m, ft2);
  const Tensor& ma = c1.tape.val(o1.mask_re);
  const Tensor& mb = c2.tape.val(o2.mask_re);
  const auto& wa = c1.tape.val(o1.wave).v;
  const auto& wb = c2.tape.val(o2.wave).v;

  // first analysis frame whose window reaches the perturbed samples
  const size_t pad = cfg.stft.pad();
  const size_t t_aff = (s0 + pad - cfg.stft.window_len) / cfg.stft.hop + 1;
  size_t frame_mismatch = 0;
  for (size_t t = 0; t < t_aff; ++t)
    for (size_t f = 0; f < ma.cols(); ++f)
      if (ma.at(t, f) != mb.at(t, f)) ++frame_mismatch;
  CHECK(frame_mismatch == 0);
  bool later_differs = false;
  for (size_t t = t_aff; t < ma.rows() && !later_differs; ++t)
    for (size_t f = 0; f < ma.cols(); ++f)
      if (ma.at(t, f) != mb.at(t, f)) {
        later_differs = true;
        break;
      }
  CHECK(later_differs);

  // output samples before the first affected frame's synthesis support
  const size_t j_lim = t_aff * cfg.stft.hop - pad;
  size_t wave_mismatch = 0;
  for (size_t j = 0; j < j_lim; ++j)
    if (wa[j] != wb[j]) ++wave_mismatch;
  CHECK(wave_mismatch == 0);
  CHECK(max_abs_diff(wa, wb) > 0.0);
}

TEST_CASE("zero mixture produces an exactly zero estimate") {
  ModelConfig cfg = toy_cfg(ModelVariant::Angle);
  Model m(cfg, 17);
  randomize_params(m, 170);
  const std::vector<std::vector<double>> mix(3, std::vector<double>(1600, 0.0));
  const auto est = extract(m, mix, QueryRegion::angular(-10.0, 30.0));
  REQUIRE(est.size() == 1600);
  size_t nonzero = 0;
  for (double v : est)
    if (v != 0.0) ++nonzero;
  CHECK(nonzero == 0);
}

TEST_CASE("loss hand values") {
  ParamStore store;
  Rng rng(400);
  const size_t n = 256;
  const auto target = random_signal(n, rng, 0.4);

  SECTION("inactive query with zero estimate costs nothing") {
    TapeCtx ctx(&store, true);
    ModelForward f;
    f.z_re = ctx.tape.constant(Tensor(8, 16));
    f.z_im = ctx.tape.constant(Tensor(8, 16));
    const int l = model_loss(ctx, f, {}, 0);
    CHECK(ctx.tape.val(l).v[0] == 0.0);
  }
  SECTION("inactive query charges the masked magnitude sum") {
    TapeCtx ctx(&store, true);
    ModelForward f;
    const Tensor zr = rse::test::random_tensor(5, 9, rng);
    const Tensor zi = rse::test::random_tensor(5, 9, rng);
    f.z_re = ctx.tape.constant(zr);
    f.z_im = ctx.tape.constant(zi);
    double expect = 0.0;
    for (double v : zr.v) expect += std::abs(v);
    for (double v : zi.v) expect += std::abs(v);
    expect *= 0.01;
    const int l = model_loss(ctx, f, {}, 0);
    CHECK(ctx.tape.val(l).v[0] == Catch::Approx(expect).epsilon(1e-12));
  }
  SECTION("exact estimate hits the cap") {
    TapeCtx ctx(&store, true);
    ModelForward f;
    Tensor w(1, n);
    std::copy(target.begin(), target.end(), w.v.begin());
    f.wave = ctx.tape.leaf(std::move(w));
    const int l = model_loss(ctx, f, target, 1);
    CHECK(ctx.tape.val(l).v[0] == -60.0);
  }
  SECTION("one percent residual energy scores 20 dB") {
    TapeCtx ctx(&store, true);
    ModelForward f;
    Tensor w(1, n);
    for (size_t i = 0; i < n; ++i) w.v[i] = 1.1 * target[i];
    f.wave = ctx.tape.leaf(std::move(w));
    const int l = model_loss(ctx, f, target, 2);
    CHECK(ctx.tape.val(l).v[0] == Catch::Approx(-20.0).margin(1e-9));
  }
  SECTION("zero-energy target with an active query is a data error") {
    TapeCtx ctx(&store, true);
    ModelForward f;
    f.wave = ctx.tape.leaf(Tensor(1, n));
    const std::vector<double> silent(n, 0.0);
    REQUIRE_THROWS_AS(model_loss(ctx, f, silent, 1), DataError);
  }
  SECTION("length mismatch is a data error") {
    TapeCtx ctx(&store, true);
    ModelForward f;
    f.wave = ctx.tape.leaf(Tensor(1, n));
    const std::vector<double> longer(n + 1, 0.1);
    REQUIRE_THROWS_AS(model_loss(ctx, f, longer, 1), DataError);
  }
}

TEST_CASE("trainer is deterministic and follows the decay schedule") {
  const ModelConfig cfg = toy_cfg(ModelVariant::Angle);
  Rng rng(500);
  std::vector<TrainItem> items;
  for (int i = 0; i < 2; ++i) {
    TrainItem it;
    it.mixture = random_mix(3, 1600, rng);
    it.target = i == 0 ? random_signal(1600, rng, 0.3)
                       : std::vector<double>(1600, 0.0);
    it.q = i == 0 ? 1 : 0;
    it.query = QueryRegion::angular(-20.0 - 10.0 * i, 35.0);
    items.push_back(std::move(it));
  }
  TrainConfig tc;
  tc.seed = 5;

  Model m1(cfg, 51), m2(cfg, 51);
  Trainer t1(m1, items, tc), t2(m2, items, tc);
  for (int i = 0; i < 6; ++i) {
    const TrainStats a = t1.step();
    const TrainStats b = t2.step();
    INFO("step " << i);
    CHECK(a.loss == b.loss);
    CHECK(std::isfinite(a.loss));
  }
  bool params_equal = true;
  for (const auto& [name, t] : m1.store.params)
    params_equal = params_equal && t.v == m2.store.params.at(name).v;
  CHECK(params_equal);

  // lr: one epoch = one pass over the two scenes, decay 0.98 every 2 epochs
  t1.set_train_step(0);
  CHECK(t1.current_lr() == Catch::Approx(1e-3));
  t1.set_train_step(3);
  CHECK(t1.current_lr() == Catch::Approx(1e-3));
  t1.set_train_step(4);
  CHECK(t1.current_lr() == Catch::Approx(1e-3 * 0.98));
  t1.set_train_step(8);
  CHECK(t1.current_lr() == Catch::Approx(1e-3 * 0.98 * 0.98));
}

TEST_CASE("checkpoint round trip resumes training bit-exactly") {
  const ModelConfig cfg = toy_cfg(ModelVariant::Angle);
  Rng rng(600);
  std::vector<TrainItem> items(2);
  items[0].mixture = random_mix(3, 1600, rng);
  items[0].target = random_signal(1600, rng, 0.3);
  items[0].q = 1;
  items[0].query = QueryRegion::angular(-15.0, 50.0);
  items[1].mixture = random_mix(3, 1600, rng);
  items[1].target.assign(1600, 0.0);
  items[1].q = 0;
  items[1].query = QueryRegion::angular(80.0, 130.0);
  TrainConfig tc;
  tc.seed = 9;

  Model m(cfg, 61);
  Trainer tr(m, items, tc);
  for (int i = 0; i < 3; ++i) tr.step();

  const std::string path = "test_network_ckpt.bin";
  save_checkpoint(path, m, &tr.optimizer(), tr.train_step());
  const auto params_at_save = m.store.params;
  const auto buffers_at_save = m.store.buffers;
  const auto opt_m_at_save = tr.optimizer().m;
  const auto opt_v_at_save = tr.optimizer().v;

  const TrainStats s4 = tr.step();
  const TrainStats s5 = tr.step();

  AdamW opt2;
  size_t step2 = 0;
  Model m2 = load_checkpoint(path, &opt2, &step2);
  REQUIRE(step2 == 3);
  REQUIRE(m2.cfg.blocks == cfg.blocks);
  REQUIRE(m2.cfg.array.num_mics() == 3);
  for (const auto& [name, t] : params_at_save) {
    INFO(name);
    REQUIRE(m2.store.params.at(name).v == t.v);
  }
  for (const auto& [name, t] : buffers_at_save) {
    INFO(name);
    REQUIRE(m2.store.buffers.at(name).v == t.v);
  }
  REQUIRE(opt2.step_count == 3);
  for (const auto& [name, t] : opt_m_at_save) REQUIRE(opt2.m.at(name).v == t.v);
  for (const auto& [name, t] : opt_v_at_save) REQUIRE(opt2.v.at(name).v == t.v);

  Trainer tr2(m2, items, tc);
  tr2.optimizer() = opt2;
  tr2.set_train_step(step2);
  const TrainStats r4 = tr2.step();
  const TrainStats r5 = tr2.step();
  CHECK(r4.loss == s4.loss);
  CHECK(r5.loss == s5.loss);
  bool same = true;
  for (const auto& [name, t] : m.store.params)
    same = same && t.v == m2.store.params.at(name).v;
  CHECK(same);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint reader rejects foreign and future files") {
  const ModelConfig cfg = toy_cfg(ModelVariant::Distance);
  const Model m(cfg, 71);
  const std::string path = "test_network_ckpt_bad.bin";
  save_checkpoint(path, m);

  SECTION("wrong magic") {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.put('X');
    f.close();
    REQUIRE_THROWS_WITH(load_checkpoint(path),
                        Catch::Matchers::ContainsSubstring("not a checkpoint"));
  }
  SECTION("unknown version") {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(4);
    const uint32_t v = 99;
    f.write(reinterpret_cast<const char*>(&v), 4);
    f.close();
    REQUIRE_THROWS_WITH(load_checkpoint(path),
                        Catch::Matchers::ContainsSubstring("version"));
  }
  SECTION("truncated file") {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> head(64);
    in.read(head.data(), 64);
    in.close();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(head.data(), 64);
    out.close();
    REQUIRE_THROWS_AS(load_checkpoint(path), DataError);
  }
  std::remove(path.c_str());
}

TEST_CASE("ring query equals the two-pass distance difference exactly") {
  ModelConfig cfg = toy_cfg(ModelVariant::Distance);
  Model m(cfg, 81);
  randomize_params(m, 810);
  randomize_buffers(m, 811);
  Rng rng(812);
  const auto mix = random_mix(3, 1600, rng);
  const auto ring = extract(m, mix, QueryRegion::ring(0.4, 1.2));
  const auto outer = extract(m, mix, QueryRegion::spherical(1.2));
  const auto inner = extract(m, mix, QueryRegion::spherical(0.4));
  REQUIRE(ring.size() == 1600);
  size_t mismatch = 0;
  for (size_t i = 0; i < ring.size(); ++i)
    if (ring[i] != outer[i] - inner[i]) ++mismatch;
  CHECK(mismatch == 0);
  CHECK(signal_energy(ring) > 0.0);
}

TEST_CASE("conical composition schemes agree when both masks pass everything") {
  // With both models rigged to the identity mask, every scheme must return
  // the analysis-resynthesis of the reference channel.
  ModelConfig ca = toy_cfg(ModelVariant::Angle);
  ModelConfig cd = toy_cfg(ModelVariant::Distance);
  Model ma(ca, 91), md(cd, 92);
  rig_allpass_mask(ma);
  rig_allpass_mask(md);
  Rng rng(900);
  const auto mix = random_mix(3, 1600, rng);
  const QueryRegion q = QueryRegion::conical(-40.0, 40.0, 1.0);
  const auto isect = extract_conical(ma, md, mix, q, ConicalScheme::Intersect);
  const auto ad = extract_conical(ma, md, mix, q, ConicalScheme::AngleThenDistance);
  const auto da = extract_conical(ma, md, mix, q, ConicalScheme::DistanceThenAngle);
  REQUIRE(isect.size() == 1600);
  CHECK(max_abs_diff(isect, mix[0]) < 1e-8);
  CHECK(max_abs_diff(ad, mix[0]) < 1e-8);
  CHECK(max_abs_diff(da, mix[0]) < 1e-8);
  CHECK(max_abs_diff(ad, isect) < 1e-8);
  CHECK(max_abs_diff(da, isect) < 1e-8);
}

TEST_CASE("query and variant compatibility is enforced") {
  ModelConfig ca = toy_cfg(ModelVariant::Angle);
  ModelConfig cd = toy_cfg(ModelVariant::Distance);
  Model ma(ca, 95), md(cd, 96);
  Rng rng(950);
  const auto mix = random_mix(3, 512, rng);
  CHECK_THROWS_AS(extract(md, mix, QueryRegion::angular(-10.0, 10.0)), ConfigError);
  CHECK_THROWS_AS(extract(ma, mix, QueryRegion::spherical(1.0)), ConfigError);
  CHECK_THROWS_AS(extract(ma, mix, QueryRegion::ring(0.3, 0.9)), ConfigError);
  CHECK_THROWS_AS(extract(ma, mix, QueryRegion::conical(-10.0, 10.0, 1.0)),
                  ConfigError);
  CHECK_THROWS_AS(
      extract_conical(md, md, mix, QueryRegion::conical(-10.0, 10.0, 1.0),
                      ConicalScheme::Intersect),
      ConfigError);
  // channel count mismatch
  CHECK_THROWS_AS(extract(ma, random_mix(2, 512, rng),
                          QueryRegion::angular(-10.0, 10.0)),
                  DataError);
  // width-dependent view counts cannot feed fixed-width aggregators
  ModelConfig bad = toy_cfg(ModelVariant::Angle, AggMethod::Concatenate);
  bad.sampling = SamplingStrategy::fixed_interval(15.0);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(ModelConfig::preset("huge"), ConfigError);
}

TEST_CASE("model config survives a json round trip") {
  ModelConfig c = toy_cfg(ModelVariant::Distance);
  c.pair_mics = {0, 2};
  c.ref_channel = 1;
  c.validate();
  nlohmann::json j = c;
  const ModelConfig back = j.get<ModelConfig>();
  nlohmann::json j2 = back;
  CHECK(j == j2);
  CHECK(back.array.num_mics() == 3);
  CHECK(back.make_pairs().size() == 1);
}
