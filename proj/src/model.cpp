#include "mtk/model.hpp"

#include "mtk/error.hpp"

namespace mtk::model {

using ops::ConvKind;

Encoder Encoder::make(ParamStore& store, const std::string& name, std::int64_t channels,
                      Rng& rng) {
  Encoder e;
  e.stem = nn::Linear::make(store, name + ".stem", 48, channels, rng);
  e.stem_norm = nn::LayerNorm::make(store, name + ".stem_norm", channels);
  std::int64_t c = channels;
  for (int s = 0; s < 3; ++s) {
    const std::string p = name + ".s" + std::to_string(s + 2);
    Stage& st = e.stages[s];
    st.merge = nn::Linear::make(store, p + ".merge", 4 * c, 2 * c, rng);
    for (int u = 0; u < 2; ++u) {
      const std::string q = p + ".u" + std::to_string(u);
      st.conv[u] = nn::Conv::make(store, q + ".conv", ConvKind::k3x3, 2 * c, 2 * c, rng);
      st.norm[u] = nn::LayerNorm::make(store, q + ".norm", 2 * c);
    }
    c *= 2;
  }
  return e;
}

std::array<Var, 4> Encoder::operator()(Context& ctx, Var img) const {
  const Shape& s = img.shape();
  if (s.size() != 4 || s[3] != 3) throw ShapeError("encoder input must be [B,H,W,3], got " + to_string(s));
  if (s[1] % 32 != 0 || s[2] % 32 != 0) {
    throw ShapeError("encoder input extents must be multiples of 32, got " + to_string(s));
  }
  std::array<Var, 4> out;
  Var x = stem_norm(ctx, stem(ctx, ops::rearrange_reduce(img, 4)));
  out[0] = x;
  for (int k = 0; k < 3; ++k) {
    const Stage& st = stages[k];
    x = st.merge(ctx, ops::rearrange_reduce(x, 2));
    for (int u = 0; u < 2; ++u) x = ops::silu(st.norm[u](ctx, st.conv[u](ctx, x)));
    out[k + 1] = x;
  }
  return out;
}

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.seed);
  const auto C = config_.channels;
  const int T = static_cast<int>(config_.tasks.size());
  const auto mixer = config_.mixer_config();
  encoder_ = Encoder::make(store_, "enc", C, rng);
  for (int s = 1; s <= config_.stages; ++s) {
    const std::int64_t in = 8 * C >> (s - 1);
    const std::int64_t ch = in / 2;
    const std::string p = "dec.s" + std::to_string(s);
    DecoderStage st;
    for (int t = 0; t < T; ++t) {
      const std::string q = p + ".t" + std::to_string(t);
      st.ecr.push_back(blocks::Ecr::make(store_, q + ".ecr", in, rng));
      st.stm.push_back({blocks::Stm::make(store_, q + ".stm0", ch, config_.alpha, mixer, rng),
                        blocks::Stm::make(store_, q + ".stm1", ch, config_.alpha, mixer, rng)});
    }
    if (config_.ctm == CtmKind::fctm) {
      st.fctm = blocks::Fctm::make(store_, p + ".fctm", ch, config_.alpha, T, mixer, rng);
    } else if (config_.ctm == CtmKind::sctm) {
      st.sctm = blocks::Sctm::make(store_, p + ".sctm", ch, config_.alpha, T, mixer, rng);
    }
    stages_.push_back(std::move(st));
  }
  for (int t = 0; t < T; ++t) {
    const std::string p = "head.t" + std::to_string(t);
    const auto out = config_.tasks[t].out_dim;
    if (config_.head == HeadKind::dense) {
      heads_.emplace_back(blocks::DenseHead::make(store_, p, head_channels(), out, rng));
    } else {
      heads_.emplace_back(blocks::LiteHead::make(store_, p, head_channels(), out, rng));
    }
  }
}

std::int64_t Model::head_channels() const { return 8 * config_.channels >> config_.stages; }

std::array<Var, 4> Model::encode(Context& ctx, Var img) const { return encoder_(ctx, img); }

blocks::TaskFeatures Model::decode(Context& ctx, const blocks::TaskFeatures& seeds,
                                   const std::array<Var, 4>& enc) const {
  const std::size_t T = config_.tasks.size();
  if (seeds.size() != T) throw ShapeError("decoder needs one stage-1 input per task");
  blocks::TaskFeatures x = seeds;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const DecoderStage& st = stages_[s];
    const Var& skip = enc[2 - s];
    for (std::size_t t = 0; t < T; ++t) {
      x[t] = st.ecr[t](ctx, x[t], skip);
      x[t] = st.stm[t][0](ctx, x[t]);
      x[t] = st.stm[t][1](ctx, x[t]);
    }
    if (st.fctm) x = (*st.fctm)(ctx, x);
    if (st.sctm) x = (*st.sctm)(ctx, x);
  }
  const int up = 1 << (3 - config_.stages);
  if (up > 1) {
    for (auto& v : x) v = ops::interpolate_bilinear(v, up);
  }
  return x;
}

std::vector<Var> Model::forward(Context& ctx, Var img) const {
  const auto enc = encode(ctx, img);
  const blocks::TaskFeatures seeds(config_.tasks.size(), enc[3]);
  const auto feats = decode(ctx, seeds, enc);
  std::vector<Var> out;
  for (std::size_t t = 0; t < feats.size(); ++t) {
    out.push_back(std::visit([&](const auto& h) { return h(ctx, feats[t]); }, heads_[t]));
  }
  return out;
}

std::vector<Tensor> Model::predict(const Tensor& img) {
  Tape tape;
  Context ctx(tape, store_, false);
  std::vector<Tensor> out;
  for (const Var& v : forward(ctx, tape.constant(img))) out.push_back(to_channel_first(v.value()));
  return out;
}

Tensor to_channel_first(const Tensor& x) {
  if (x.ndim() != 4) throw ShapeError("to_channel_first needs rank 4, got " + to_string(x.shape()));
  const auto B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  Tensor y({B, C, H, W});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t h = 0; h < H; ++h)
      for (std::int64_t w = 0; w < W; ++w)
        for (std::int64_t c = 0; c < C; ++c)
          y[((b * C + c) * H + h) * W + w] = x[((b * H + h) * W + w) * C + c];
  return y;
}

}  // namespace mtk::model
