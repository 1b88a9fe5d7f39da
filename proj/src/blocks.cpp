#include "mtk/blocks.hpp"

#include "mtk/error.hpp"

namespace mtk::blocks {

using nn::Init;
using ops::ConvKind;

Ecr Ecr::make(ParamStore& store, const std::string& name, std::int64_t in, Rng& rng) {
  if (in % 2 != 0) throw ShapeError("ECR needs an even channel count, got " + std::to_string(in));
  Ecr e;
  e.in = in;
  e.expand = nn::Linear::make(store, name + ".expand", in, 2 * in, rng);
  e.reduce = nn::Conv::make(store, name + ".reduce", ConvKind::k1x1, in, in / 2, rng);
  return e;
}

Var Ecr::operator()(Context& ctx, Var x, Var skip) const {
  const Shape& xs = x.shape();
  const Shape& ss = skip.shape();
  if (xs.size() != 4 || ss.size() != 4 || xs[3] != in || ss[0] != xs[0] || ss[1] != 2 * xs[1] ||
      ss[2] != 2 * xs[2] || ss[3] != in / 2) {
    throw ShapeError("ECR input " + to_string(xs) + " with skip " + to_string(ss));
  }
  Var up = ops::rearrange_expand(expand(ctx, x), 2);
  return reduce(ctx, ops::concat_channels({up, skip}));
}

Stm Stm::make(ParamStore& store, const std::string& name, std::int64_t channels, int alpha,
              const nn::MixerConfig& mixer, Rng& rng) {
  const std::int64_t inner = alpha * channels;
  Stm s;
  s.norm = nn::LayerNorm::make(store, name + ".norm", channels);
  s.in_main = nn::Linear::make(store, name + ".in_main", channels, inner, rng);
  s.local = nn::Conv::make(store, name + ".local", ConvKind::k3x3_depthwise, inner, inner, rng);
  s.mixer = nn::Mixer::make(store, name + ".mixer", inner, mixer, rng);
  s.in_gate = nn::Linear::make(store, name + ".in_gate", channels, inner, rng);
  s.out_norm = nn::LayerNorm::make(store, name + ".out_norm", inner);
  s.out = nn::Linear::make(store, name + ".out", inner, channels, rng, Init::zero);
  return s;
}

Var Stm::operator()(Context& ctx, Var x) const {
  Var a = norm(ctx, x);
  Var main = ops::silu(local(ctx, in_main(ctx, a)));
  Var y = mixer(ctx, main);
  Var gate = ops::silu(in_gate(ctx, a));
  return ops::add(x, out(ctx, ops::mul(out_norm(ctx, y), gate)));
}

namespace {

void check_tasks(const TaskFeatures& xs, std::size_t expected, const char* block) {
  if (xs.size() != expected) {
    throw ShapeError(std::string(block) + " built for " + std::to_string(expected) +
                     " tasks, got " + std::to_string(xs.size()));
  }
  for (const auto& x : xs) {
    if (x.shape() != xs[0].shape()) throw ShapeError(std::string(block) + ": task shapes differ");
  }
}

}  // namespace

Fctm Fctm::make(ParamStore& store, const std::string& name, std::int64_t channels, int alpha,
                int tasks, const nn::MixerConfig& mixer, Rng& rng) {
  const std::int64_t inner = alpha * channels;
  Fctm f;
  f.fuse = nn::Linear::make(store, name + ".fuse", tasks * channels, inner, rng);
  f.fuse_local =
      nn::Conv::make(store, name + ".fuse_local", ConvKind::k3x3_depthwise, inner, inner, rng);
  f.shared_mixer = nn::Mixer::make(store, name + ".shared_mixer", inner, mixer, rng);
  for (int t = 0; t < tasks; ++t) {
    const std::string p = name + ".t" + std::to_string(t);
    Task k;
    k.norm = nn::LayerNorm::make(store, p + ".norm", channels);
    k.in = nn::Linear::make(store, p + ".in", channels, inner, rng);
    k.local = nn::Conv::make(store, p + ".local", ConvKind::k3x3_depthwise, inner, inner, rng);
    k.mixer = nn::Mixer::make(store, p + ".mixer", inner, mixer, rng);
    k.gate = nn::Linear::make(store, p + ".gate", channels, inner, rng);
    k.out = nn::Linear::make(store, p + ".out", inner, channels, rng, Init::zero);
    f.tasks.push_back(std::move(k));
  }
  return f;
}

TaskFeatures Fctm::operator()(Context& ctx, const TaskFeatures& xs, Trace* trace) const {
  check_tasks(xs, tasks.size(), "F-CTM");
  std::vector<Var> normed;
  for (std::size_t t = 0; t < xs.size(); ++t) normed.push_back(tasks[t].norm(ctx, xs[t]));
  Var fused = normed.size() == 1 ? normed[0] : ops::concat_channels(normed);
  Var z_sh = shared_mixer(ctx, ops::silu(fuse_local(ctx, fuse(ctx, fused))));
  if (trace) trace->shared = z_sh;

  TaskFeatures out;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const Task& k = tasks[t];
    Var z = k.mixer(ctx, ops::silu(k.local(ctx, k.in(ctx, normed[t]))));
    Var g = ops::sigmoid(k.gate(ctx, normed[t]));
    // g*z + (1-g)*z_sh
    Var mixed = ops::add(z_sh, ops::mul(g, ops::sub(z, z_sh)));
    if (trace) {
      trace->task.push_back(z);
      trace->gate.push_back(g);
      trace->mixed.push_back(mixed);
    }
    out.push_back(ops::add(xs[t], k.out(ctx, mixed)));
  }
  return out;
}

Sctm Sctm::make(ParamStore& store, const std::string& name, std::int64_t channels, int alpha,
                int tasks, const nn::MixerConfig& mixer, Rng& rng) {
  const std::int64_t inner = alpha * channels;
  Sctm s;
  s.fuse1 = nn::Conv::make(store, name + ".fuse1", ConvKind::k3x3, tasks * channels, inner, rng);
  s.fuse2 = nn::Conv::make(store, name + ".fuse2", ConvKind::k3x3, inner, inner, rng);
  for (int t = 0; t < tasks; ++t) {
    const std::string p = name + ".t" + std::to_string(t);
    Task k;
    k.norm = nn::LayerNorm::make(store, p + ".norm", channels);
    k.in_main = nn::Linear::make(store, p + ".in_main", channels, inner, rng);
    k.local = nn::Conv::make(store, p + ".local", ConvKind::k3x3_depthwise, inner, inner, rng);
    k.mixer = nn::Mixer::make(store, p + ".mixer", inner, mixer, rng);
    k.in_gate = nn::Linear::make(store, p + ".in_gate", channels, inner, rng);
    k.out_norm = nn::LayerNorm::make(store, p + ".out_norm", inner);
    k.out = nn::Linear::make(store, p + ".out", inner, channels, rng, Init::zero);
    s.tasks.push_back(std::move(k));
  }
  return s;
}

TaskFeatures Sctm::operator()(Context& ctx, const TaskFeatures& xs, Var* shared_out) const {
  check_tasks(xs, tasks.size(), "S-CTM");
  std::vector<Var> normed;
  for (std::size_t t = 0; t < xs.size(); ++t) normed.push_back(tasks[t].norm(ctx, xs[t]));
  Var fused = normed.size() == 1 ? normed[0] : ops::concat_channels(normed);
  Var shared = fuse2(ctx, ops::silu(fuse1(ctx, fused)));
  if (shared_out) *shared_out = shared;

  TaskFeatures out;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const Task& k = tasks[t];
    Var main = ops::silu(k.local(ctx, k.in_main(ctx, normed[t])));
    Var y = k.mixer(ctx, main, shared);
    Var gate = ops::silu(k.in_gate(ctx, normed[t]));
    out.push_back(ops::add(xs[t], k.out(ctx, ops::mul(k.out_norm(ctx, y), gate))));
  }
  return out;
}

DenseHead DenseHead::make(ParamStore& store, const std::string& name, std::int64_t channels,
                          std::int64_t out_dim, Rng& rng) {
  return {nn::Linear::make(store, name + ".expand", channels, 16 * channels, rng),
          nn::Linear::make(store, name + ".out", channels, out_dim, rng)};
}

Var DenseHead::operator()(Context& ctx, Var x) const {
  return out(ctx, ops::rearrange_expand(expand(ctx, x), 4));
}

LiteHead LiteHead::make(ParamStore& store, const std::string& name, std::int64_t channels,
                        std::int64_t out_dim, Rng& rng) {
  return {nn::Conv::make(store, name + ".conv", ConvKind::k3x3, channels, channels, rng),
          nn::BatchNorm::make(store, name + ".bn", channels),
          nn::Linear::make(store, name + ".out", channels, out_dim, rng)};
}

Var LiteHead::operator()(Context& ctx, Var x) const {
  return ops::interpolate_bilinear(out(ctx, ops::relu(bn(ctx, conv(ctx, x)))), 4);
}

}  // namespace mtk::blocks
