#include <gtest/gtest.h>

#include <cmath>

#include "mtk/error.hpp"
#include "mtk/gradcheck.hpp"
#include "mtk/kernels.hpp"
#include "mtk/ops.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mtk;
using testutil::random;

TEST(Tensor, ShapeAndFill) {
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6);
  EXPECT_EQ(t.ndim(), 2);
  EXPECT_DOUBLE_EQ(t[5], 1.5);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Linear, FlopCountFormula) {
  Tape tape;
  Rng rng(1);
  ops::FlopTally tally;
  {
    ops::FlopScope scope(tally);
    ops::linear(tape.constant(random({10, 4}, rng)), tape.constant(random({4, 8}, rng)));
  }
  EXPECT_DOUBLE_EQ(tally.linear, 640.0);
  EXPECT_DOUBLE_EQ(tally.total(), 640.0);
}

TEST(Linear, MatchesLoopAndGradchecks) {
  Rng rng(2);
  const Tensor x = random({3, 5}, rng), w = random({5, 4}, rng), b = random({4}, rng);
  Tape tape;
  const Tensor y = ops::linear(tape.constant(x), tape.constant(w), tape.constant(b)).value();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) {
      double acc = b[j];
      for (int k = 0; k < 5; ++k) acc += x[i * 5 + k] * w[k * 4 + j];
      EXPECT_NEAR(y[i * 4 + j], acc, 1e-14);
    }
  ParamStore store;
  store.add("x", x);
  store.add("w", w);
  gradcheck::Probe probe(3);
  const auto r = gradcheck::check("linear", store, [&](Context& c) {
    return probe({ops::linear(c.param("x"), c.param("w"))});
  }, {});
  EXPECT_LT(r.max_rel_err(), 1e-6);
}

TEST(Conv, MatchesNaiveLoops) {
  Rng rng(4);
  const Tensor x = random({2, 5, 4, 3}, rng);
  Tape tape;
  const Var vx = tape.constant(x);
  const Tensor w1 = random({3, 6}, rng), w3 = random({3, 3, 3, 6}, rng), wd = random({3, 3, 3}, rng);
  EXPECT_LT(max_abs_diff(ops::conv2d(vx, ops::ConvKind::k1x1, tape.constant(w1)).value(),
                         oracles::conv(x, w1, 1, false)),
            1e-12);
  EXPECT_LT(max_abs_diff(ops::conv2d(vx, ops::ConvKind::k3x3, tape.constant(w3)).value(),
                         oracles::conv(x, w3, 3, false)),
            1e-12);
  EXPECT_LT(max_abs_diff(ops::conv2d(vx, ops::ConvKind::k3x3_depthwise, tape.constant(wd)).value(),
                         oracles::conv(x, wd, 3, true)),
            1e-12);
}

TEST(Conv, FlopRules) {
  Rng rng(5);
  Tape tape;
  const Var x = tape.constant(random({1, 4, 4, 3}, rng));
  ops::FlopTally t1, t3, td;
  {
    ops::FlopScope s(t1);
    ops::conv2d(x, ops::ConvKind::k1x1, tape.constant(random({3, 2}, rng)));
  }
  {
    ops::FlopScope s(t3);
    ops::conv2d(x, ops::ConvKind::k3x3, tape.constant(random({3, 3, 3, 2}, rng)));
  }
  {
    ops::FlopScope s(td);
    ops::conv2d(x, ops::ConvKind::k3x3_depthwise, tape.constant(random({3, 3, 3}, rng)));
  }
  EXPECT_DOUBLE_EQ(t1.conv, 2.0 * 3 * 2 * 16);
  EXPECT_DOUBLE_EQ(t3.conv, 18.0 * 3 * 2 * 16);
  EXPECT_DOUBLE_EQ(td.conv, 18.0 * 3 * 16);
  EXPECT_DOUBLE_EQ(t1.linear, 0.0);
}

TEST(Conv, SerialAndParallelKernelsAgree) {
  Rng rng(6);
  const Tensor x = random({2, 6, 5, 7}, rng), w = random({3, 3, 7}, rng);
  Tensor a({2, 6, 5, 7}), b({2, 6, 5, 7});
  kernels::depthwise3x3_reference(2, 6, 5, 7, x.data(), w.data(), a.data());
  kernels::depthwise3x3(2, 6, 5, 7, x.data(), w.data(), b.data());
  EXPECT_TRUE(testutil::identical(a, b));

  const Tensor A = random({9, 13}, rng), B = random({13, 6}, rng);
  Tensor c1({9, 6}), c2({9, 6});
  kernels::gemm_reference(9, 13, 6, A.data(), B.data(), c1.data(), false);
  kernels::gemm(9, 13, 6, A.data(), B.data(), c2.data(), false);
  EXPECT_LT(max_abs_diff(c1, c2), 1e-13);
}

TEST(Bilinear, HalfPixelConventionOn2x2) {
  Tape tape;
  const Tensor x({1, 2, 2, 1}, std::vector<double>{0, 1, 2, 3});
  const Tensor y = ops::interpolate_bilinear(tape.constant(x), 2).value();
  ASSERT_EQ(y.shape(), (Shape{1, 4, 4, 1}));
  // Source coordinate (i + 0.5) / 2 - 0.5 clamped to [0, 1]; value = 2*sy + sx.
  auto src = [](int i) { return std::clamp((i + 0.5) / 2.0 - 0.5, 0.0, 1.0); };
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(y[i * 4 + j], 2 * src(i) + src(j), 1e-15);
  EXPECT_DOUBLE_EQ(y[1 * 4 + 1], 0.75);
}

TEST(Rearrange, RoundTripAndLayout) {
  Rng rng(7);
  Tape tape;
  const Tensor x = random({2, 3, 2, 12}, rng);
  const Var e = ops::rearrange_expand(tape.constant(x), 2);
  ASSERT_EQ(e.shape(), (Shape{2, 6, 4, 3}));
  EXPECT_TRUE(testutil::identical(ops::rearrange_reduce(e, 2).value(), x));
  // Channel group (i*r + j) lands at offset (i, j).
  EXPECT_EQ(e.value()[((0 * 6 + 1) * 4 + 0) * 3 + 2], x[2 * 3 + 2]);
}

TEST(LayerNorm, NormalisesEachPosition) {
  Rng rng(8);
  Tape tape;
  const Tensor x = random({4, 6}, rng, 3.0);
  const Tensor y =
      ops::layernorm(tape.constant(x), tape.constant(Tensor({6}, 1.0)), tape.constant(Tensor({6})))
          .value();
  for (int i = 0; i < 4; ++i) {
    double m = 0, v = 0;
    for (int c = 0; c < 6; ++c) m += y[i * 6 + c] / 6;
    for (int c = 0; c < 6; ++c) v += (y[i * 6 + c] - m) * (y[i * 6 + c] - m) / 6;
    EXPECT_NEAR(m, 0, 1e-12);
    EXPECT_NEAR(v, 1, 1e-4);
  }
}

TEST(BatchNorm, RunningStatistics) {
  Rng rng(9);
  Tape tape;
  const Tensor x = random({2, 2, 2, 3}, rng);
  Tensor rm({3}), rv({3}, 1.0);
  ops::batchnorm2d(tape.constant(x), tape.constant(Tensor({3}, 1.0)), tape.constant(Tensor({3})),
                   rm, rv, true);
  for (int c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (int p = 0; p < 8; ++p) m += x[p * 3 + c] / 8;
    for (int p = 0; p < 8; ++p) v += (x[p * 3 + c] - m) * (x[p * 3 + c] - m) / 7;
    EXPECT_NEAR(rm[c], 0.1 * m, 1e-14);
    EXPECT_NEAR(rv[c], 0.9 + 0.1 * v, 1e-14);
  }
}

TEST(Broadcast, ShapesAndErrors) {
  Tape tape;
  const Var a = tape.constant(Tensor({2, 3}, 1.0)), b = tape.constant(Tensor({1, 3}, 2.0));
  EXPECT_EQ(ops::add(a, b).shape(), (Shape{2, 3}));
  EXPECT_DOUBLE_EQ(ops::mul(a, b).value()[4], 2.0);
  EXPECT_THROW(ops::add(a, tape.constant(Tensor({1, 2}))), ShapeError);
  EXPECT_THROW(ops::add(a, tape.constant(Tensor({3}))), ShapeError);
}

TEST(Attention, WeightRowsSumToOne) {
  Rng rng(10);
  const Tensor q = random({1, 6, 5, 4}, rng), k = random({1, 6, 5, 4}, rng);
  const auto ws = ops::window_attention_weights(q, k, 4, 2);
  ASSERT_FALSE(ws.empty());
  for (const auto& w : ws) {
    const auto n = w.dim(0);
    for (std::int64_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::int64_t j = 0; j < n; ++j) s += w[i * n + j];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Tape, UnreachedGradientIsZero) {
  Tape tape;
  const Var a = tape.leaf(Tensor({2}, 1.0)), b = tape.leaf(Tensor({2}, 2.0));
  const Var l = ops::sum(ops::mul(a, a));
  tape.backward(l);
  EXPECT_DOUBLE_EQ(tape.grad(a)[0], 2.0);
  EXPECT_DOUBLE_EQ(tape.grad(b)[1], 0.0);
}

TEST(Gradcheck, KernelScopePassesAndCorruptionFails) {
  gradcheck::Options opt;
  for (const auto& r : gradcheck::run_scope("kernels", opt)) EXPECT_LT(r.max_rel_err(), 1e-6) << r.suite;
  opt.corrupt = true;
  const auto bad = gradcheck::run_scope("kernels", opt);
  EXPECT_FALSE(bad.front().pass(1e-4));
}
