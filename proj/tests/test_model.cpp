#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mtk/blocks.hpp"
#include "mtk/error.hpp"
#include "mtk/gradcheck.hpp"
#include "mtk/model.hpp"
#include "test_util.hpp"

using namespace mtk;
using testutil::random;

namespace {

nn::MixerConfig small_mixer() {
  nn::MixerConfig m;
  m.state = 3;
  return m;
}

ModelConfig small_config(int tasks = 2) {
  ModelConfig c;
  c.channels = 8;
  c.state = 4;
  c.tasks.resize(static_cast<std::size_t>(tasks));
  return c;
}

}  // namespace

TEST(Ecr, ShapeContractAndMismatch) {
  ParamStore store;
  Rng rng(1);
  auto ecr = blocks::Ecr::make(store, "ecr", 8, rng);
  Tape tape;
  Context ctx(tape, store, true);
  const Var y = ecr(ctx, tape.constant(random({1, 2, 3, 8}, rng)), tape.constant(random({1, 4, 6, 4}, rng)));
  EXPECT_EQ(y.shape(), (Shape{1, 4, 6, 4}));
  EXPECT_THROW(ecr(ctx, tape.constant(random({1, 2, 3, 8}, rng)), tape.constant(random({1, 4, 4, 4}, rng))),
               ShapeError);
}

TEST(Stm, StartsAsIdentity) {
  ParamStore store;
  Rng rng(2);
  auto stm = blocks::Stm::make(store, "stm", 4, 2, small_mixer(), rng);
  Tape tape;
  Context ctx(tape, store, true);
  const Tensor x = random({1, 3, 3, 4}, rng);
  EXPECT_TRUE(testutil::identical(stm(ctx, tape.constant(x)).value(), x));
}

TEST(Fctm, SingleTaskAndGateRange) {
  ParamStore store;
  Rng rng(3);
  auto f = blocks::Fctm::make(store, "f", 4, 2, 1, small_mixer(), rng);
  store.randomize(rng, 0.5);
  Tape tape;
  Context ctx(tape, store, true);
  blocks::Fctm::Trace tr;
  const auto ys = f(ctx, {tape.constant(random({1, 2, 2, 4}, rng))}, &tr);
  ASSERT_EQ(ys.size(), 1u);
  EXPECT_EQ(ys[0].shape(), (Shape{1, 2, 2, 4}));
  for (double g : tr.gate[0].value().values()) {
    EXPECT_GT(g, 0.0);
    EXPECT_LT(g, 1.0);
  }
  EXPECT_THROW(f(ctx, {}), ShapeError);
}

TEST(Sctm, GradientsReachQueryAndFusionPaths) {
  ParamStore store;
  Rng rng(4);
  auto s = blocks::Sctm::make(store, "s", 4, 2, 2, small_mixer(), rng);
  store.randomize(rng, 0.5);
  Tape tape;
  Context ctx(tape, store, true);
  const Var x0 = tape.leaf(random({1, 2, 2, 4}, rng)), x1 = tape.leaf(random({1, 2, 2, 4}, rng));
  const auto ys = s(ctx, {x0, x1});
  tape.backward(ops::sum(ys[0]));
  double fuse = 0;
  for (const auto& [name, v] : ctx.bound()) {
    if (name.find("fuse") == std::string::npos) continue;
    for (double g : tape.grad(v).values()) fuse += g * g;
  }
  EXPECT_GT(fuse, 0.0);
  double gx1 = 0;
  for (double g : tape.grad(x1).values()) gx1 += g * g;
  EXPECT_GT(gx1, 0.0);  // task 1 reaches task 0 only through the fusion
  double gx0 = 0;
  for (double g : tape.grad(x0).values()) gx0 += g * g;
  EXPECT_GT(gx0, 0.0);
}

TEST(Heads, DenseShapeAndZeroOutput) {
  ParamStore store;
  Rng rng(5);
  auto h = blocks::DenseHead::make(store, "h", 8, 3, rng);
  Tape tape;
  Context ctx(tape, store, true);
  const Tensor x = random({1, 4, 4, 8}, rng);
  EXPECT_EQ(h(ctx, tape.constant(x)).shape(), (Shape{1, 16, 16, 3}));
  for (double& v : store.get("h.out.w").values()) v = 0;
  for (double& v : store.get("h.out.b").values()) v = 0;
  Tape t2;
  Context c2(t2, store, true);
  for (double v : h(c2, t2.constant(x)).value().values()) EXPECT_EQ(v, 0.0);
}

TEST(Heads, LiteConstantInputAndCheaper) {
  ParamStore store;
  Rng rng(6);
  auto h = blocks::LiteHead::make(store, "h", 8, 3, rng);
  Tape tape;
  Context ctx(tape, store, false);
  // Zero padding breaks constancy at the border of the conv; use a 1x1 map.
  const Tensor x({1, 1, 1, 8}, 0.7);
  const Tensor y = h(ctx, tape.constant(x)).value();
  ASSERT_EQ(y.shape(), (Shape{1, 4, 4, 3}));
  for (std::int64_t p = 0; p < 16; ++p)
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(y[p * 3 + c], y[c], 1e-14);

  ModelConfig dense = small_config(), lite = small_config();
  lite.head = HeadKind::lite;
  EXPECT_LT(model::count_params_flops(lite, 64, 64).flops, model::count_params_flops(dense, 64, 64).flops);
}

TEST(BlockGradcheck, AllSuitesPass) {
  for (const auto& r : gradcheck::run_scope("blocks", {})) EXPECT_LT(r.max_rel_err(), 1e-4) << r.suite;
}

TEST(Model, EncoderShapeContract) {
  ModelConfig c;
  c.tasks.resize(2);
  model::Model m(c);
  Tape tape;
  Context ctx(tape, m.store(), false);
  const auto e = m.encode(ctx, tape.constant(Tensor({1, 64, 64, 3})));
  EXPECT_EQ(e[0].shape(), (Shape{1, 16, 16, 32}));
  EXPECT_EQ(e[1].shape(), (Shape{1, 8, 8, 64}));
  EXPECT_EQ(e[2].shape(), (Shape{1, 4, 4, 128}));
  EXPECT_EQ(e[3].shape(), (Shape{1, 2, 2, 256}));
  for (double v : e[3].value().values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Model, ForwardShapesForEveryStageCount) {
  for (int stages : {1, 2, 3}) {
    ModelConfig c = small_config(4);
    c.tasks = default_tasks();
    c.stages = stages;
    model::Model m(c);
    Rng rng(7);
    const auto out = m.predict(random({2, 32, 32, 3}, rng));
    ASSERT_EQ(out.size(), 4u);
    for (std::size_t t = 0; t < 4; ++t) {
      EXPECT_EQ(out[t].shape(), (Shape{2, c.tasks[t].out_dim, 32, 32}));
      for (double v : out[t].values()) EXPECT_TRUE(std::isfinite(v));
    }
  }
}

TEST(Model, DecoderTraceAt64) {
  ModelConfig c;
  c.tasks.resize(2);
  for (int s = 1; s <= 3; ++s) {
    ModelConfig cs = c;
    cs.stages = s;
    model::Model ms(cs);
    Tape t2;
    Context c2(t2, ms.store(), false);
    const auto enc = ms.encode(c2, t2.constant(Tensor({1, 64, 64, 3})));
    const auto d = ms.decode(c2, {enc[3], enc[3]}, enc);
    EXPECT_EQ(d[0].shape(), (Shape{1, 16, 16, 256 >> s}));
    EXPECT_EQ(ms.head_channels(), 256 >> s);
  }
}

TEST(Model, SingleTask) {
  ModelConfig c = small_config(1);
  model::Model m(c);
  const auto out = m.predict(Tensor({1, 32, 32, 3}, 0.1));
  ASSERT_EQ(out.size(), 1u);
}

TEST(Model, DeterministicInitAndForward) {
  const ModelConfig c = small_config();
  model::Model a(c), b(c);
  ASSERT_EQ(a.store().entries().size(), b.store().entries().size());
  for (std::size_t i = 0; i < a.store().entries().size(); ++i)
    EXPECT_TRUE(testutil::identical(a.store().entries()[i].value, b.store().entries()[i].value));
  Rng rng(8);
  const Tensor img = random({1, 32, 32, 3}, rng);
  EXPECT_TRUE(testutil::identical(a.predict(img)[0], b.predict(img)[0]));
  ModelConfig other = c;
  other.seed = 1;
  model::Model d(other);
  EXPECT_FALSE(testutil::identical(d.store().entries()[0].value, a.store().entries()[0].value));
}

TEST(Model, SwapParityOfParameterTree) {
  ModelConfig s = small_config(), a = small_config();
  a.mixer = nn::MixerKind::attention;
  model::Model ms(s), ma(a);
  auto strip = [](const ParamStore& st) {
    // Everything up to the mixer leaf; mixer contents differ by design.
    std::set<std::string> names;
    for (const auto& e : st.entries()) {
      const auto pos = e.name.find("mixer");
      names.insert(pos == std::string::npos ? e.name : e.name.substr(0, pos + 5));
    }
    return names;
  };
  EXPECT_EQ(strip(ms.store()), strip(ma.store()));
  EXPECT_EQ(ms.predict(Tensor({1, 32, 32, 3}))[0].shape(), ma.predict(Tensor({1, 32, 32, 3}))[0].shape());
}

TEST(Counter, MatchesMeasuredForwardFlopsAndStore) {
  for (CtmKind ctm : {CtmKind::none, CtmKind::fctm, CtmKind::sctm}) {
    for (auto mixer : {nn::MixerKind::ssm, nn::MixerKind::attention}) {
      for (HeadKind head : {HeadKind::dense, HeadKind::lite}) {
        ModelConfig c = small_config(3);
        c.tasks = {default_tasks()[0], default_tasks()[1], default_tasks()[2]};
        c.ctm = ctm;
        c.mixer = mixer;
        c.head = head;
        c.stages = ctm == CtmKind::none ? 2 : 3;
        model::Model m(c);
        ops::FlopTally measured;
        {
          ops::FlopScope scope(measured);
          m.predict(Tensor({1, 64, 64, 3}));
        }
        const auto counted = model::count_params_flops(c, 64, 64);
        EXPECT_DOUBLE_EQ(counted.flops, measured.total()) << name(ctm) << " " << name(head);
        EXPECT_DOUBLE_EQ(counted.breakdown.scan, measured.scan);
        EXPECT_EQ(counted.params, m.store().count());
      }
    }
  }
}

TEST(Counter, WidthScaling) {
  ModelConfig a = small_config(), b = small_config();
  b.channels = 16;
  const auto ca = model::count_params_flops(a, 64, 64), cb = model::count_params_flops(b, 64, 64);
  EXPECT_GT(cb.params, 3 * ca.params);
  EXPECT_LT(cb.params, 5 * ca.params);
}

TEST(ModelGradcheck, FullModelSampled) {
  gradcheck::Options opt;
  opt.max_entries = 1;
  for (const auto& r : gradcheck::run_scope("model", opt)) EXPECT_LT(r.max_rel_err(), 1e-4) << r.suite;
}

TEST(Config, ValidateRejectsNonsense) {
  ModelConfig c;
  c.stages = 4;
  EXPECT_THROW(c.validate(), SchemaError);
  c = {};
  c.directions.clear();
  EXPECT_THROW(c.validate(), SchemaError);
  c = {};
  c.alpha = 0;
  EXPECT_THROW(c.validate(), SchemaError);
}
