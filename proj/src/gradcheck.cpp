#include "mtk/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mtk/blocks.hpp"
#include "mtk/error.hpp"
#include "mtk/model.hpp"
#include "mtk/ssm.hpp"

namespace mtk::gradcheck {

double Report::max_rel_err() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_err);
  return m;
}

Var Probe::operator()(const std::vector<Var>& outputs) {
  Var total;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (weights_.size() <= i) {
      Tensor w(outputs[i].shape());
      for (double& v : w.values()) v = rng_.uniform(-1.0, 1.0);
      weights_.push_back(std::move(w));
    }
    Var d = ops::dot(outputs[i], weights_[i]);
    total = total.valid() ? ops::add(total, d) : d;
  }
  return total;
}

namespace {

double evaluate(ParamStore& store, const LossFn& loss) {
  Tape tape;
  Context ctx(tape, store, true);
  return loss(ctx).value()[0];
}

}  // namespace

Report check(const std::string& suite, ParamStore& store, const LossFn& loss, const Options& opt) {
  std::map<std::string, Tensor> analytic;
  {
    Tape tape;
    Context ctx(tape, store, true);
    Var l = loss(ctx);
    tape.backward(l);
    for (const auto& [name, v] : ctx.bound()) analytic[name] = tape.grad(v);
  }
  Rng rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
  Report report{suite, {}};
  bool corrupted = false;
  for (auto& e : store.entries()) {
    if (!e.trainable) continue;
    Tensor ga = analytic.count(e.name) ? analytic[e.name] : Tensor::zeros_like(e.value);
    if (opt.corrupt && !corrupted) {
      ga[0] = 1.5 * ga[0] + 1.0;
      corrupted = true;
    }
    std::vector<std::int64_t> idx(static_cast<std::size_t>(e.value.numel()));
    std::iota(idx.begin(), idx.end(), 0);
    if (opt.max_entries > 0 && static_cast<std::int64_t>(idx.size()) > opt.max_entries) {
      // Partial Fisher-Yates: first max_entries slots become the sample.
      for (int i = 0; i < opt.max_entries; ++i) {
        const auto j = i + rng.below(static_cast<std::int64_t>(idx.size()) - i);
        std::swap(idx[i], idx[j]);
      }
      idx.resize(static_cast<std::size_t>(opt.max_entries));
      if (opt.corrupt && e.name == store.entries().front().name) idx[0] = 0;
    }
    Entry rep{e.name, 0.0, 0.0, 0};
    for (auto i : idx) {
      const double orig = e.value[i];
      e.value[i] = orig + opt.eps;
      const double fp = evaluate(store, loss);
      e.value[i] = orig - opt.eps;
      const double fm = evaluate(store, loss);
      e.value[i] = orig;
      const double fd = (fp - fm) / (2.0 * opt.eps);
      const double err = std::abs(ga[i] - fd) / std::max(1.0, std::abs(fd));
      rep.max_rel_err = std::max(rep.max_rel_err, err);
      rep.max_abs_grad = std::max(rep.max_abs_grad, std::abs(fd));
      ++rep.checked;
    }
    report.entries.push_back(std::move(rep));
  }
  return report;
}

namespace {

using blocks::TaskFeatures;

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  return init::uniform(std::move(shape), -scale, scale, rng);
}

// A store holding a block's parameters plus its inputs as checked tensors.
struct Fixture {
  ParamStore store;
  Rng rng;
  Probe probe;
  explicit Fixture(std::uint64_t seed) : rng(seed), probe(seed + 1) {}
  void input(const std::string& name, Shape shape) { store.add(name, random_tensor(shape, rng)); }
  void randomize(double scale = 0.5) {
    // Inputs were added first and are already random; perturb everything so
    // zero-initialised projections do not hide gradients.
    store.randomize(rng, scale);
  }
};

std::vector<Report> kernel_suites(const Options& opt) {
  std::vector<Report> out;
  const std::uint64_t s = opt.seed;

  {
    Fixture f(s + 11);
    f.input("x", {2, 3, 5});
    f.store.add("w", random_tensor({5, 4}, f.rng));
    f.store.add("b", random_tensor({4}, f.rng));
    out.push_back(check("linear", f.store, [&](Context& c) {
      return f.probe({ops::linear(c.param("x"), c.param("w"), c.param("b"))});
    }, opt));
  }
  for (auto [kind, label] : {std::pair{ops::ConvKind::k1x1, "conv1x1"},
                             std::pair{ops::ConvKind::k3x3, "conv3x3"},
                             std::pair{ops::ConvKind::k3x3_depthwise, "conv3x3_depthwise"}}) {
    Fixture f(s + 12);
    f.input("x", {2, 3, 4, 3});
    const Shape ws = kind == ops::ConvKind::k1x1 ? Shape{3, 2}
                     : kind == ops::ConvKind::k3x3 ? Shape{3, 3, 3, 2}
                                                   : Shape{3, 3, 3};
    f.store.add("w", random_tensor(ws, f.rng));
    f.store.add("b", random_tensor({ws.back()}, f.rng));
    out.push_back(check(label, f.store, [&, kind = kind](Context& c) {
      return f.probe({ops::conv2d(c.param("x"), kind, c.param("w"), c.param("b"))});
    }, opt));
  }
  {
    Fixture f(s + 13);
    f.input("x", {2, 3, 6});
    f.store.add("g", random_tensor({6}, f.rng));
    f.store.add("b", random_tensor({6}, f.rng));
    out.push_back(check("layernorm", f.store, [&](Context& c) {
      return f.probe({ops::layernorm(c.param("x"), c.param("g"), c.param("b"))});
    }, opt));
  }
  {
    Fixture f(s + 14);
    f.input("x", {2, 2, 3, 4});
    f.store.add("g", random_tensor({4}, f.rng));
    f.store.add("b", random_tensor({4}, f.rng));
    f.store.add("rm", Tensor({4}), false);
    f.store.add("rv", Tensor({4}, 1.0), false);
    out.push_back(check("batchnorm2d", f.store, [&](Context& c) {
      return f.probe({ops::batchnorm2d(c.param("x"), c.param("g"), c.param("b"), c.buffer("rm"),
                                       c.buffer("rv"), true)});
    }, opt));
  }
  {
    Fixture f(s + 15);
    f.input("x", {1, 3, 2, 2});
    out.push_back(check("interpolate_bilinear", f.store, [&](Context& c) {
      return f.probe({ops::interpolate_bilinear(c.param("x"), 3)});
    }, opt));
  }
  {
    Fixture f(s + 16);
    f.input("x", {1, 2, 2, 8});
    f.input("y", {1, 4, 4, 3});
    out.push_back(check("rearrange", f.store, [&](Context& c) {
      return f.probe({ops::rearrange_expand(c.param("x"), 2), ops::rearrange_reduce(c.param("y"), 2)});
    }, opt));
  }
  {
    Fixture f(s + 17);
    f.input("a", {2, 3, 4});
    f.input("b", {2, 1, 4});
    out.push_back(check("elementwise", f.store, [&](Context& c) {
      Var a = c.param("a"), b = c.param("b");
      Var y = ops::mul(ops::silu(a), ops::sigmoid(b));
      y = ops::add(y, ops::softplus(ops::sub(a, b)));
      y = ops::add(y, ops::exp(ops::scale(ops::neg(a), 0.5)));
      return f.probe({y, ops::mean(ops::add_scalar(a, 1.0))});
    }, opt));
  }
  {
    Fixture f(s + 18);
    f.input("q", {1, 5, 3, 4});
    f.input("k", {1, 5, 3, 4});
    f.input("v", {1, 5, 3, 4});
    out.push_back(check("window_attention", f.store, [&](Context& c) {
      return f.probe({ops::window_attention(c.param("q"), c.param("k"), c.param("v"), 2, 2)});
    }, opt));
  }
  for (std::int64_t chunk : {0, 2}) {
    Fixture f(s + 19);
    const std::int64_t L = 7, C = 4, N = 3;
    f.input("x", {2, L, C});
    f.input("src", {2, L, C});
    ssm::register_params(f.store, "ssm", ssm::SsmParams::init(C, N, f.rng));
    f.randomize();
    out.push_back(check(chunk ? "s6_scan_chunked" : "s6_scan", f.store, [&, chunk](Context& c) {
      return f.probe({ssm::forward(ssm::bind(c, "ssm"), c.param("x"), c.param("src"), chunk)});
    }, opt));
  }
  {
    Fixture f(s + 20);
    const std::int64_t C = 4, N = 3;
    f.input("query", {1, 2, 3, C});
    f.input("shared", {1, 2, 3, C});
    for (auto d : scan2d::kAllDirections) {
      ssm::register_params(f.store, scan2d::name(d), ssm::SsmParams::init(C, N, f.rng));
    }
    f.randomize();
    out.push_back(check("css2d", f.store, [&](Context& c) {
      scan2d::DirectionVars v;
      for (auto d : scan2d::kAllDirections) v[static_cast<std::size_t>(d)] = ssm::bind(c, scan2d::name(d));
      return f.probe({scan2d::cross_forward(v, c.param("query"), c.param("shared"))});
    }, opt));
  }
  return out;
}

std::vector<Report> block_suites(const Options& opt) {
  std::vector<Report> out;
  const std::uint64_t s = opt.seed;
  nn::MixerConfig mixer;
  mixer.state = 3;
  {
    Fixture f(s + 31);
    f.input("x", {1, 2, 2, 4});
    f.input("skip", {1, 4, 4, 2});
    auto ecr = blocks::Ecr::make(f.store, "ecr", 4, f.rng);
    f.randomize();
    out.push_back(check("ecr", f.store, [&](Context& c) {
      return f.probe({ecr(c, c.param("x"), c.param("skip"))});
    }, opt));
  }
  for (auto kind : {nn::MixerKind::ssm, nn::MixerKind::attention}) {
    Fixture f(s + 32);
    f.input("x", {1, 3, 3, 4});
    nn::MixerConfig m = mixer;
    m.kind = kind;
    m.window = 2;
    auto stm = blocks::Stm::make(f.store, "stm", 4, 2, m, f.rng);
    f.randomize();
    out.push_back(check(kind == nn::MixerKind::ssm ? "stm" : "stm_attention", f.store,
                        [&](Context& c) { return f.probe({stm(c, c.param("x"))}); }, opt));
  }
  {
    Fixture f(s + 33);
    f.input("x0", {1, 2, 2, 4});
    f.input("x1", {1, 2, 2, 4});
    auto fctm = blocks::Fctm::make(f.store, "fctm", 4, 2, 2, mixer, f.rng);
    f.randomize();
    out.push_back(check("fctm", f.store, [&](Context& c) {
      return f.probe(fctm(c, {c.param("x0"), c.param("x1")}));
    }, opt));
  }
  {
    Fixture f(s + 34);
    f.input("x0", {1, 2, 2, 4});
    f.input("x1", {1, 2, 2, 4});
    auto sctm = blocks::Sctm::make(f.store, "sctm", 4, 2, 2, mixer, f.rng);
    f.randomize();
    out.push_back(check("sctm", f.store, [&](Context& c) {
      return f.probe(sctm(c, {c.param("x0"), c.param("x1")}));
    }, opt));
  }
  {
    Fixture f(s + 35);
    f.input("x", {1, 2, 2, 4});
    auto head = blocks::DenseHead::make(f.store, "dense", 4, 3, f.rng);
    f.randomize();
    out.push_back(check("dense_head", f.store,
                        [&](Context& c) { return f.probe({head(c, c.param("x"))}); }, opt));
  }
  {
    Fixture f(s + 36);
    f.input("x", {2, 2, 2, 4});
    auto head = blocks::LiteHead::make(f.store, "lite", 4, 3, f.rng);
    f.randomize();
    out.push_back(check("lite_head", f.store,
                        [&](Context& c) { return f.probe({head(c, c.param("x"))}); }, opt));
  }
  {
    Fixture f(s + 37);
    f.input("img", {1, 32, 32, 3});
    auto enc = model::Encoder::make(f.store, "enc", 4, f.rng);
    f.randomize();
    Options o = opt;
    if (o.max_entries == 0) o.max_entries = 24;
    out.push_back(check("encoder", f.store, [&](Context& c) {
      auto e = enc(c, c.param("img"));
      return f.probe({e[0], e[1], e[2], e[3]});
    }, o));
  }
  return out;
}

std::vector<Report> model_suites(const Options& opt) {
  std::vector<Report> out;
  for (CtmKind ctm : {CtmKind::sctm, CtmKind::fctm}) {
    ModelConfig cfg;
    cfg.channels = 8;
    cfg.state = 4;
    cfg.ctm = ctm;
    cfg.tasks = {default_tasks()[0], default_tasks()[1]};
    cfg.seed = opt.seed;
    model::Model m(cfg);
    Rng rng(opt.seed + 41);
    m.store().randomize(rng, 0.5);
    const Tensor img = random_tensor({1, 32, 32, 3}, rng);
    Probe probe(opt.seed + 42);
    Options o = opt;
    if (o.max_entries == 0) o.max_entries = 3;
    out.push_back(check(std::string("model_") + name(ctm), m.store(), [&](Context& c) {
      return probe(m.forward(c, c.tape().constant(img)));
    }, o));
  }
  return out;
}

}  // namespace

std::vector<std::string> scopes() { return {"kernels", "blocks", "model"}; }

std::vector<Report> run_scope(const std::string& scope, const Options& opt) {
  if (scope == "kernels") return kernel_suites(opt);
  if (scope == "blocks") return block_suites(opt);
  if (scope == "model") return model_suites(opt);
  throw Error("usage", "unknown gradcheck scope '" + scope + "'");
}

}  // namespace mtk::gradcheck
