#pragma once

#include <optional>
#include <string>

#include "mtk/ops.hpp"
#include "mtk/params.hpp"
#include "mtk/scan2d.hpp"

// Parameterised layers. Each `make` registers its tensors in a ParamStore
// under a dotted name; calling the layer binds them through a Context.
namespace mtk::nn {

enum class Init { fan_in, zero };

struct Linear {
  std::string name;
  std::int64_t in = 0, out = 0;
  bool bias = true;

  static Linear make(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out,
                     Rng& rng, Init init = Init::fan_in, bool bias = true);
  Var operator()(Context& ctx, Var x) const;
};

struct Conv {
  std::string name;
  ops::ConvKind kind = ops::ConvKind::k3x3;
  std::int64_t in = 0, out = 0;

  static Conv make(ParamStore& store, const std::string& name, ops::ConvKind kind, std::int64_t in,
                   std::int64_t out, Rng& rng, Init init = Init::fan_in);
  Var operator()(Context& ctx, Var x) const;
};

struct LayerNorm {
  std::string name;
  static LayerNorm make(ParamStore& store, const std::string& name, std::int64_t dim);
  Var operator()(Context& ctx, Var x) const;
};

struct BatchNorm {
  std::string name;
  static BatchNorm make(ParamStore& store, const std::string& name, std::int64_t dim);
  Var operator()(Context& ctx, Var x) const;
};

enum class MixerKind { ssm, attention };

struct MixerConfig {
  MixerKind kind = MixerKind::ssm;
  std::int64_t state = 8;
  bool tie_directions = false;
  std::vector<scan2d::Direction> active{scan2d::kAllDirections.begin(),
                                        scan2d::kAllDirections.end()};
  int window = 4;
  int heads = 2;
};

// Spatial token mixer: SS2D / CSS2D, or windowed self / cross attention in
// the swap variant. With `shared`, the mixer is the cross form.
struct Mixer {
  std::string name;
  std::int64_t channels = 0;
  MixerConfig cfg;
  std::optional<Linear> q, k, v, o;

  static Mixer make(ParamStore& store, const std::string& name, std::int64_t channels,
                    const MixerConfig& cfg, Rng& rng);
  Var operator()(Context& ctx, Var query, std::optional<Var> shared = std::nullopt) const;
};

}  // namespace mtk::nn
