#include "mtk/layers.hpp"

#include "mtk/error.hpp"

namespace mtk::nn {

Linear Linear::make(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out,
                    Rng& rng, Init init, bool bias) {
  if (init == Init::zero) {
    store.add(name + ".w", Tensor({in, out}));
    if (bias) store.add(name + ".b", Tensor({out}));
  } else {
    store.add(name + ".w", init::fan_in_uniform({in, out}, in, rng));
    if (bias) store.add(name + ".b", init::fan_in_uniform({out}, in, rng));
  }
  return {name, in, out, bias};
}

Var Linear::operator()(Context& ctx, Var x) const {
  if (bias) return ops::linear(x, ctx.param(name + ".w"), ctx.param(name + ".b"));
  return ops::linear(x, ctx.param(name + ".w"));
}

Conv Conv::make(ParamStore& store, const std::string& name, ops::ConvKind kind, std::int64_t in,
                std::int64_t out, Rng& rng, Init init) {
  Shape shape;
  std::int64_t fan_in = in;
  switch (kind) {
    case ops::ConvKind::k1x1: shape = {in, out}; break;
    case ops::ConvKind::k3x3:
      shape = {3, 3, in, out};
      fan_in = 9 * in;
      break;
    case ops::ConvKind::k3x3_depthwise:
      if (in != out) throw ShapeError("depthwise conv needs equal in/out channels");
      shape = {3, 3, in};
      fan_in = 9;
      break;
  }
  if (init == Init::zero) {
    store.add(name + ".w", Tensor(shape));
    store.add(name + ".b", Tensor({out}));
  } else {
    store.add(name + ".w", init::fan_in_uniform(shape, fan_in, rng));
    store.add(name + ".b", init::fan_in_uniform({out}, fan_in, rng));
  }
  return {name, kind, in, out};
}

Var Conv::operator()(Context& ctx, Var x) const {
  return ops::conv2d(x, kind, ctx.param(name + ".w"), ctx.param(name + ".b"));
}

LayerNorm LayerNorm::make(ParamStore& store, const std::string& name, std::int64_t dim) {
  store.add(name + ".g", Tensor({dim}, 1.0));
  store.add(name + ".b", Tensor({dim}));
  return {name};
}

Var LayerNorm::operator()(Context& ctx, Var x) const {
  return ops::layernorm(x, ctx.param(name + ".g"), ctx.param(name + ".b"));
}

BatchNorm BatchNorm::make(ParamStore& store, const std::string& name, std::int64_t dim) {
  store.add(name + ".g", Tensor({dim}, 1.0));
  store.add(name + ".b", Tensor({dim}));
  store.add(name + ".running_mean", Tensor({dim}), false);
  store.add(name + ".running_var", Tensor({dim}, 1.0), false);
  return {name};
}

Var BatchNorm::operator()(Context& ctx, Var x) const {
  return ops::batchnorm2d(x, ctx.param(name + ".g"), ctx.param(name + ".b"),
                          ctx.buffer(name + ".running_mean"), ctx.buffer(name + ".running_var"),
                          ctx.training());
}

Mixer Mixer::make(ParamStore& store, const std::string& name, std::int64_t channels,
                  const MixerConfig& cfg, Rng& rng) {
  Mixer m{name, channels, cfg, {}, {}, {}, {}};
  if (cfg.kind == MixerKind::attention) {
    m.q = Linear::make(store, name + ".q", channels, channels, rng);
    m.k = Linear::make(store, name + ".k", channels, channels, rng);
    m.v = Linear::make(store, name + ".v", channels, channels, rng);
    m.o = Linear::make(store, name + ".o", channels, channels, rng);
    return m;
  }
  if (cfg.tie_directions) {
    ssm::register_params(store, name + ".ssm", ssm::SsmParams::init(channels, cfg.state, rng));
  } else {
    for (auto d : cfg.active) {
      ssm::register_params(store, name + "." + scan2d::name(d),
                           ssm::SsmParams::init(channels, cfg.state, rng));
    }
  }
  return m;
}

Var Mixer::operator()(Context& ctx, Var query, std::optional<Var> shared) const {
  if (cfg.kind == MixerKind::attention) {
    Var src = shared ? *shared : query;
    Var y = ops::window_attention((*q)(ctx, query), (*k)(ctx, src), (*v)(ctx, src), cfg.window,
                                  cfg.heads);
    return (*o)(ctx, y);
  }
  scan2d::DirectionVars vars;
  for (auto d : cfg.active) {
    const auto i = static_cast<std::size_t>(d);
    vars[i] = ssm::bind(ctx, name + "." + (cfg.tie_directions ? "ssm" : scan2d::name(d)));
  }
  return scan2d::cross_forward(vars, query, shared ? *shared : query, cfg.active);
}

}  // namespace mtk::nn
