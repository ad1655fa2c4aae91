// Copyright 2026 The RSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>

#include "rse/autodiff.hpp"
#include "rse/layers.hpp"
#include "testutil.hpp"

using namespace rse;
using rse::test::gradcheck;
using rse::test::gradcheck_op;
using rse::test::random_tensor;

TEST_CASE("elementwise op gradients") {
  Rng rng(101);
  const Tensor x = random_tensor(3, 4, rng);
  const Tensor other = random_tensor(3, 4, rng);

  SECTION("add") {
    REQUIRE(gradcheck_op(x, [&](Tape& t, int id) {
              return t.sum_all(t.mul(t.add(id, t.constant(other)), id));
            }) < 1e-6);
  }
  SECTION("sub") {
    REQUIRE(gradcheck_op(x, [&](Tape& t, int id) {
              return t.sum_all(t.mul(t.sub(id, t.constant(other)), id));
            }) < 1e-6);
  }
  SECTION("mul both sides") {
    REQUIRE(gradcheck_op(x, [&](Tape& t, int id) {
              return t.sum_all(t.mul(id, id));  // gradient doubles
            }) < 1e-6);
  }
  SECTION("div numerator and denominator") {
    Tensor pos = x;
    for (double& v : pos.v) v = 1.0 + std::abs(v);
    REQUIRE(gradcheck_op(pos, [&](Tape& t, int id) {
              return t.sum_all(t.div(t.constant(other), id));
            }) < 1e-6);
    REQUIRE(gradcheck_op(pos, [&](Tape& t, int id) {
              return t.sum_all(t.div(id, t.add_scalar(id, 3.0)));
            }) < 1e-6);
  }
  SECTION("scale add_scalar") {
    REQUIRE(gradcheck_op(x, [&](Tape& t, int id) {
              return t.sum_all(t.mul(t.scale(t.add_scalar(id, 0.3), -1.7), id));
            }) < 1e-6);
  }
  SECTION("tanh sigmoid") {
    REQUIRE(gradcheck_op(x, [&](Tape& t, int id) {
              return t.sum_all(t.tanh_op(id));
            }) < 1e-6);
    REQUIRE(gradcheck_op(x, [&](Tape& t, int id) {
              return t.sum_all(t.sigmoid_op(id));
            }) < 1e-6);
  }
  SECTION("log sqrt recip") {
    Tensor pos = x;
    for (double& v : pos.v) v = 0.5 + std::abs(v);
    REQUIRE(gradcheck_op(pos, [&](Tape& t, int id) {
              return t.sum_all(t.log_op(id));
            }) < 1e-6);
    REQUIRE(gradcheck_op(pos, [&](Tape& t, int id) {
              return t.sum_all(t.sqrt_op(id));
            }) < 1e-6);
    REQUIRE(gradcheck_op(pos, [&](Tape& t, int id) {
              return t.sum_all(t.recip_op(id));
            }) < 1e-6);
  }
  SECTION("abs_sum away from zero") {
    Tensor nz = x;
    for (double& v : nz.v) v += (v >= 0.0 ? 0.5 : -0.5);
    REQUIRE(gradcheck_op(nz, [&](Tape& t, int id) { return t.abs_sum(id); }) < 1e-6);
  }
}

TEST_CASE("matmul gradients both operands") {
  Rng rng(102);
  const Tensor a = random_tensor(3, 5, rng);
  const Tensor b = random_tensor(5, 2, rng);
  REQUIRE(gradcheck_op(a, [&](Tape& t, int id) {
            return t.sum_all(t.matmul(id, t.constant(b)));
          }) < 1e-6);
  REQUIRE(gradcheck_op(b, [&](Tape& t, int id) {
            return t.sum_all(t.mul(t.matmul(t.constant(a), id),
                                   t.matmul(t.constant(a), id)));
          }) < 1e-6);
}

TEST_CASE("reduction and broadcast gradients") {
  Rng rng(103);
  const Tensor x = random_tensor(4, 3, rng);
  const Tensor row = random_tensor(1, 3, rng);
  const Tensor col = random_tensor(4, 1, rng);

  for (auto build : std::vector<std::function<int(Tape&, int)>>{
           [&](Tape& t, int id) { return t.sum_all(t.mul(t.mean_rows(id), t.mean_rows(id))); },
           [&](Tape& t, int id) { return t.sum_all(t.mul(t.mean_cols(id), t.mean_cols(id))); },
           [&](Tape& t, int id) {
             return t.sum_all(t.mul(t.add_rowvec(id, t.constant(row)), id));
           },
           [&](Tape& t, int id) {
             return t.sum_all(t.mul(t.sub_rowvec(id, t.constant(row)), id));
           },
           [&](Tape& t, int id) {
             return t.sum_all(t.mul(t.mul_rowvec(id, t.constant(row)), id));
           },
           [&](Tape& t, int id) {
             return t.sum_all(t.mul(t.sub_colvec(id, t.constant(col)), id));
           },
           [&](Tape& t, int id) {
             return t.sum_all(t.mul(t.mul_colvec(id, t.constant(col)), id));
           }}) {
    REQUIRE(gradcheck_op(x, build) < 1e-6);
  }

  // broadcast operand side
  REQUIRE(gradcheck_op(row, [&](Tape& t, int id) {
            return t.sum_all(t.mul(t.mul_rowvec(t.constant(x), id),
                                   t.add_rowvec(t.constant(x), id)));
          }) < 1e-6);
  REQUIRE(gradcheck_op(col, [&](Tape& t, int id) {
            return t.sum_all(t.mul(t.mul_colvec(t.constant(x), id), t.constant(x)));
          }) < 1e-6);
  REQUIRE(gradcheck_op(row, [&](Tape& t, int id) {
            return t.sum_all(t.mul(t.repeat_rows(id, 6), t.repeat_rows(id, 6)));
          }) < 1e-6);
}

TEST_CASE("shape op gradients") {
  Rng rng(104);
  const Tensor x = random_tensor(4, 6, rng);
  REQUIRE(gradcheck_op(x, [&](Tape& t, int id) {
            const int top = t.slice_rows(id, 0, 2);
            const int bot = t.slice_rows(id, 2, 4);
            return t.sum_all(t.mul(t.concat_rows({bot, top}), t.concat_rows({top, bot})));
          }) < 1e-6);
  REQUIRE(gradcheck_op(x, [&](Tape& t, int id) {
            const int l = t.slice_cols(id, 0, 3);
            const int r = t.slice_cols(id, 3, 6);
            return t.sum_all(t.mul(t.concat_cols({r, l}), t.concat_cols({l, r})));
          }) < 1e-6);
  const std::vector<size_t> perm = {2, 0, 3, 1};
  REQUIRE(gradcheck_op(x, [&](Tape& t, int id) {
            return t.sum_all(t.mul(t.permute_rows(id, perm), id));
          }) < 1e-6);
}

TEST_CASE("glu gradient") {
  Rng rng(105);
  const Tensor x = random_tensor(3, 8, rng);
  ParamStore store;
  REQUIRE(gradcheck(
              x,
              [&](const Tensor& in, Tensor* g) {
                TapeCtx ctx(&store);
                const int id = ctx.tape.leaf(in);
                const int root = ctx.tape.sum_all(ctx.tape.mul(glu(ctx, id), glu(ctx, id)));
                if (g) {
                  ctx.tape.backward(root);
                  *g = ctx.tape.grad(id);
                }
                return ctx.tape.val(root).v[0];
              }) < 1e-6);
}

TEST_CASE("batchnorm training-mode gradient") {
  Rng rng(106);
  const Tensor x = random_tensor(6, 3, rng);
  REQUIRE(gradcheck(
              x,
              [&](const Tensor& in, Tensor* g) {
                ParamStore store;  // fresh store: running stats are a side effect
                Rng r2(1);
                init_norm(store, "bn", 3, true);
                store.param("bn.gamma") = random_tensor(1, 3, r2);
                store.param("bn.beta") = random_tensor(1, 3, r2);
                TapeCtx ctx(&store, true);
                const int id = ctx.tape.leaf(in);
                const int y = batchnorm(ctx, id, "bn");
                const int root = ctx.tape.sum_all(ctx.tape.mul(y, y));
                if (g) {
                  ctx.tape.backward(root);
                  *g = ctx.tape.grad(id);
                }
                return ctx.tape.val(root).v[0];
              }) < 1e-5);
}

TEST_CASE("batchnorm inference uses running stats and is causal-safe") {
  ParamStore store;
  init_norm(store, "bn", 2, true);
  store.buffer("bn.running_mean").v = {1.0, -1.0};
  store.buffer("bn.running_var").v = {4.0, 0.25};
  TapeCtx ctx(&store, false);
  Tensor x(3, 2);
  x.v = {1.0, -1.0, 3.0, 0.0, 5.0, 1.0};
  const int y = batchnorm(ctx, ctx.tape.leaf(x), "bn");
  // row 0 normalizes to ~zero regardless of the other rows
  REQUIRE(ctx.tape.val(y).at(0, 0) == Catch::Approx(0.0).margin(1e-5));
  REQUIRE(ctx.tape.val(y).at(1, 0) == Catch::Approx(2.0 / std::sqrt(4.0 + kNormEps)));
  REQUIRE(ctx.tape.val(y).at(2, 1) == Catch::Approx(2.0 / std::sqrt(0.25 + kNormEps)));
}

TEST_CASE("batchnorm updates running stats in training mode") {
  ParamStore store;
  init_norm(store, "bn", 1, true);
  TapeCtx ctx(&store, true);
  Tensor x(4, 1);
  x.v = {1.0, 2.0, 3.0, 4.0};  // mean 2.5, biased var 1.25
  batchnorm(ctx, ctx.tape.leaf(x), "bn");
  REQUIRE(store.buffer("bn.running_mean").v[0] == Catch::Approx(0.1 * 2.5));
  REQUIRE(store.buffer("bn.running_var").v[0] == Catch::Approx(0.9 * 1.0 + 0.1 * 1.25));
}

TEST_CASE("layernorm gradient") {
  Rng rng(107);
  const Tensor x = random_tensor(4, 5, rng);
  ParamStore store;
  Rng r2(2);
  init_norm(store, "ln", 5);
  store.param("ln.gamma") = random_tensor(1, 5, r2);
  REQUIRE(gradcheck(
              x,
              [&](const Tensor& in, Tensor* g) {
                TapeCtx ctx(&store);
                const int id = ctx.tape.leaf(in);
                const int y = layernorm(ctx, id, "ln");
                const int root = ctx.tape.sum_all(ctx.tape.mul(y, y));
                if (g) {
                  ctx.tape.backward(root);
                  *g = ctx.tape.grad(id);
                }
                return ctx.tape.val(root).v[0];
              }) < 1e-5);
}

TEST_CASE("lstm gradient through sequence") {
  Rng rng(108);
  ParamStore store;
  init_lstm(store, "l", 3, 4, rng);
  const Tensor x0 = random_tensor(2, 3, rng);  // batch 2
  const Tensor x1 = random_tensor(2, 3, rng);
  const Tensor x2 = random_tensor(2, 3, rng);

  // gradient w.r.t. an input
  REQUIRE(gradcheck(
              x1,
              [&](const Tensor& in, Tensor* g) {
                TapeCtx ctx(&store);
                const int i0 = ctx.constant(x0);
                const int i1 = ctx.tape.leaf(in);
                const int i2 = ctx.constant(x2);
                const auto hs = lstm(ctx, {i0, i1, i2}, "l", 4);
                const int root = ctx.tape.sum_all(ctx.tape.mul(hs.back(), hs.back()));
                if (g) {
                  ctx.tape.backward(root);
                  *g = ctx.tape.grad(i1);
                }
                return ctx.tape.val(root).v[0];
              }) < 1e-5);

  // gradient w.r.t. the recurrent weights
  REQUIRE(gradcheck(
              store.param("l.wh"),
              [&](const Tensor& w, Tensor* g) {
                ParamStore s2 = store;
                s2.param("l.wh") = w;
                TapeCtx ctx(&s2);
                const auto hs = lstm(ctx, {ctx.constant(x0), ctx.constant(x1), ctx.constant(x2)},
                                     "l", 4);
                const int root = ctx.tape.sum_all(ctx.tape.mul(hs.back(), hs.back()));
                if (g) {
                  ctx.tape.backward(root);
                  *g = ctx.tape.grad(ctx.param("l.wh"));
                }
                return ctx.tape.val(root).v[0];
              }) < 1e-5);
}

TEST_CASE("bilstm output shape and gradient") {
  Rng rng(109);
  ParamStore store;
  init_lstm(store, "b.fwd", 3, 4, rng);
  init_lstm(store, "b.bwd", 3, 4, rng);
  const Tensor x0 = random_tensor(2, 3, rng);
  const Tensor x1 = random_tensor(2, 3, rng);

  TapeCtx ctx(&store);
  const auto hs = bilstm(ctx, {ctx.constant(x0), ctx.constant(x1)}, "b", 4);
  REQUIRE(hs.size() == 2);
  REQUIRE(ctx.tape.val(hs[0]).cols() == 8);

  REQUIRE(gradcheck(
              x0,
              [&](const Tensor& in, Tensor* g) {
                TapeCtx c2(&store);
                const int i0 = c2.tape.leaf(in);
                const auto out = bilstm(c2, {i0, c2.constant(x1)}, "b", 4);
                const int root = c2.tape.sum_all(c2.tape.mul(out[0], out[1]));
                if (g) {
                  c2.tape.backward(root);
                  *g = c2.tape.grad(i0);
                }
                return c2.tape.val(root).v[0];
              }) < 1e-5);
}

TEST_CASE("gradient accumulation when a node fans out") {
  Tape tape;
  const int x = tape.leaf(Tensor::full(1, 1, 3.0));
  const int y = tape.add(x, x);  // y = 2x
  tape.backward(y);
  REQUIRE(tape.grad(x).v[0] == Catch::Approx(2.0));
}

TEST_CASE("constants receive no gradient") {
  Tape tape;
  const int c = tape.constant(Tensor::full(2, 2, 1.5));
  const int x = tape.leaf(Tensor::full(2, 2, 2.0));
  const int root = tape.sum_all(tape.mul(c, x));
  tape.backward(root);
  REQUIRE(!tape.grad_live(c));
  const auto gx = tape.grad(x);
  for (double v : gx.v) REQUIRE(v == Catch::Approx(1.5));
}

TEST_CASE("backward rejects non-scalar roots") {
  Tape tape;
  const int x = tape.leaf(Tensor::full(2, 2, 1.0));
  REQUIRE_THROWS_AS(tape.backward(x), NumericError);
}

TEST_CASE("adamw zero gradient applies only weight decay") {
  ParamStore store;
  store.create("w", Tensor::full(2, 2, 2.0));
  AdamW opt;
  opt.lr = 0.1;
  opt.weight_decay = 0.01;
  opt.step(store, {});  // no gradients at all
  for (double v : store.param("w").v)
    REQUIRE(v == Catch::Approx(2.0 * (1.0 - 0.1 * 0.01)));
}

TEST_CASE("adamw rejects non-finite gradients naming the block") {
  ParamStore store;
  store.create("enc.w", Tensor::full(1, 2, 1.0));
  AdamW opt;
  std::map<std::string, Tensor> grads;
  Tensor g(1, 2);
  g.v = {1.0, std::nan("")};
  grads["enc.w"] = g;
  try {
    opt.step(store, grads);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    REQUIRE(std::string(e.what()).find("enc.w") != std::string::npos);
  }
}

TEST_CASE("adamw single step matches hand computation") {
  ParamStore store;
  store.create("w", Tensor::full(1, 1, 1.0));
  AdamW opt;  // defaults: lr 1e-3, betas (0.9, 0.999), eps 1e-8, wd 0.01
  std::map<std::string, Tensor> grads;
  grads["w"] = Tensor::full(1, 1, 0.5);
  opt.step(store, grads);
  // bias-corrected first step: mhat = g, vhat = g^2
  const double want = 1.0 - 1e-3 * (0.5 / (0.5 + 1e-8) + 0.01 * 1.0);
  REQUIRE(store.param("w").v[0] == Catch::Approx(want).epsilon(1e-12));
}

TEST_CASE("adamw is deterministic") {
  auto run = [] {
    Rng rng(7);
    ParamStore store;
    store.create("w", random_tensor(3, 3, rng));
    AdamW opt;
    for (int i = 0; i < 5; ++i) {
      std::map<std::string, Tensor> grads;
      grads["w"] = random_tensor(3, 3, rng);
      opt.step(store, grads);
    }
    return store.param("w").v;
  };
  REQUIRE(run() == run());
}
