#pragma once

#include <vector>

#include "mtk/layers.hpp"

// Decoder blocks. Feature maps are channel-last [B,H,W,C]; a task feature
// set is one map per task, in task order.
namespace mtk::blocks {

using TaskFeatures = std::vector<Var>;

// Expand (linear C -> 2C, rearrange x2), concat the skip, reduce (1x1 conv).
// x [B,H,W,C], skip [B,2H,2W,C/2] -> [B,2H,2W,C/2].
struct Ecr {
  std::int64_t in = 0;
  nn::Linear expand;
  nn::Conv reduce;

  static Ecr make(ParamStore& store, const std::string& name, std::int64_t in, Rng& rng);
  Var operator()(Context& ctx, Var x, Var skip) const;
};

// Self-task block: pre-norm, expanded main branch (linear, depthwise conv,
// SiLU, 2D scan), SiLU gate branch, layernorm, gated product, projection back
// and residual. The output projection starts at zero.
struct Stm {
  nn::LayerNorm norm;
  nn::Linear in_main, in_gate;
  nn::Conv local;
  nn::Mixer mixer;
  nn::LayerNorm out_norm;
  nn::Linear out;

  static Stm make(ParamStore& store, const std::string& name, std::int64_t channels, int alpha,
                  const nn::MixerConfig& mixer, Rng& rng);
  Var operator()(Context& ctx, Var x) const;
};

// Cross-task block with a gated convex combination of a task scan and a
// shared scan of the fused tasks.
struct Fctm {
  struct Task {
    nn::LayerNorm norm;
    nn::Linear in, gate, out;
    nn::Conv local;
    nn::Mixer mixer;
  };
  nn::Linear fuse;
  nn::Conv fuse_local;
  nn::Mixer shared_mixer;
  std::vector<Task> tasks;

  struct Trace {
    Var shared;                          // z_sh
    std::vector<Var> task, gate, mixed;  // z_t, g_t, g_t z_t + (1 - g_t) z_sh
  };

  static Fctm make(ParamStore& store, const std::string& name, std::int64_t channels, int alpha,
                   int tasks, const nn::MixerConfig& mixer, Rng& rng);
  TaskFeatures operator()(Context& ctx, const TaskFeatures& xs, Trace* trace = nullptr) const;
};

// Cross-task block where the fused tasks (two 3x3 convs) generate the scan
// parameters and each task's main branch is the query (cross 2D scan).
struct Sctm {
  struct Task {
    nn::LayerNorm norm;
    nn::Linear in_main, in_gate;
    nn::Conv local;
    nn::Mixer mixer;
    nn::LayerNorm out_norm;
    nn::Linear out;
  };
  nn::Conv fuse1, fuse2;
  std::vector<Task> tasks;

  static Sctm make(ParamStore& store, const std::string& name, std::int64_t channels, int alpha,
                   int tasks, const nn::MixerConfig& mixer, Rng& rng);
  TaskFeatures operator()(Context& ctx, const TaskFeatures& xs, Var* shared_out = nullptr) const;
};

// [B,h,w,C] -> [B,4h,4w,out]: linear C -> 16C, rearrange x4, linear C -> out.
struct DenseHead {
  nn::Linear expand, out;
  static DenseHead make(ParamStore& store, const std::string& name, std::int64_t channels,
                        std::int64_t out_dim, Rng& rng);
  Var operator()(Context& ctx, Var x) const;
};

// [B,h,w,C] -> [B,4h,4w,out]: conv3x3, batchnorm, ReLU, linear, bilinear x4.
struct LiteHead {
  nn::Conv conv;
  nn::BatchNorm bn;
  nn::Linear out;
  static LiteHead make(ParamStore& store, const std::string& name, std::int64_t channels,
                       std::int64_t out_dim, Rng& rng);
  Var operator()(Context& ctx, Var x) const;
};

}  // namespace mtk::blocks
