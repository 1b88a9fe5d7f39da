#pragma once

#include <array>
#include <optional>
#include <variant>

#include "mtk/blocks.hpp"
#include "mtk/config.hpp"

namespace mtk::model {

// Convolutional pyramid standing in for a pretrained backbone:
// img [B,H,W,3] -> C at H/4, 2C at H/8, 4C at H/16, 8C at H/32.
struct Encoder {
  struct Stage {
    nn::Linear merge;
    std::array<nn::Conv, 2> conv;
    std::array<nn::LayerNorm, 2> norm;
  };
  nn::Linear stem;
  nn::LayerNorm stem_norm;
  std::array<Stage, 3> stages;

  static Encoder make(ParamStore& store, const std::string& name, std::int64_t channels, Rng& rng);
  std::array<Var, 4> operator()(Context& ctx, Var img) const;
};

struct DecoderStage {
  std::vector<blocks::Ecr> ecr;
  std::vector<std::array<blocks::Stm, 2>> stm;
  std::optional<blocks::Fctm> fctm;
  std::optional<blocks::Sctm> sctm;
};

using Head = std::variant<blocks::DenseHead, blocks::LiteHead>;

class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  std::array<Var, 4> encode(Context& ctx, Var img) const;
  // Runs the enabled stages from per-task stage-1 inputs (normally all E4).
  // Returns per-task features at H/4; with fewer than three stages the last
  // stage output is bilinearly upsampled to H/4.
  blocks::TaskFeatures decode(Context& ctx, const blocks::TaskFeatures& seeds,
                              const std::array<Var, 4>& enc) const;
  // Per-task channel-last predictions [B,H,W,out_dim].
  std::vector<Var> forward(Context& ctx, Var img) const;
  // Eval-mode predictions, channel-first [B,out_dim,H,W].
  std::vector<Tensor> predict(const Tensor& img);

  // Channels of the decoder output fed to the heads.
  std::int64_t head_channels() const;

 private:
  ModelConfig config_;
  ParamStore store_;
  Encoder encoder_;
  std::vector<DecoderStage> stages_;
  std::vector<Head> heads_;
};

Tensor to_channel_first(const Tensor& x);

struct Counts {
  std::int64_t params = 0;
  double flops = 0;
  ops::FlopTally breakdown;
};
// Analytic parameter count and forward FLOPs for one image of size H x W.
Counts count_params_flops(const ModelConfig& config, std::int64_t H, std::int64_t W);

}  // namespace mtk::model
