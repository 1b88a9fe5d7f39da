#include <algorithm>

#include "mtk/model.hpp"
#include "mtk/ssm.hpp"

namespace mtk::model {

namespace {

// Mirrors the tallies the ops record during a forward pass.
struct Counter {
  const ModelConfig& cfg;
  ops::FlopTally t;

  void linear(double in, double out, double pos) { t.linear += 2 * in * out * pos; }
  void conv1x1(double in, double out, double pos) { t.conv += 2 * in * out * pos; }
  void conv3x3(double in, double out, double pos) { t.conv += 18 * in * out * pos; }
  void depthwise(double c, double pos) { t.conv += 18 * c * pos; }

  void mixer(std::int64_t c, std::int64_t h, std::int64_t w) {
    const double L = static_cast<double>(h * w);
    const double C = static_cast<double>(c);
    if (cfg.mixer == nn::MixerKind::attention) {
      for (int k = 0; k < 4; ++k) linear(C, C, L);
      const std::int64_t wh = std::min<std::int64_t>(cfg.window, h);
      const std::int64_t ww = std::min<std::int64_t>(cfg.window, w);
      for (std::int64_t y = 0; y < h; y += wh)
        for (std::int64_t x = 0; x < w; x += ww) {
          const double n = static_cast<double>(std::min(wh, h - y) * std::min(ww, w - x));
          t.attention += 4 * n * n * C;
        }
      return;
    }
    const double N = static_cast<double>(cfg.state);
    const double R = static_cast<double>(ssm::SsmParams::default_rank(c));
    for (std::size_t d = 0; d < cfg.directions.size(); ++d) {
      linear(C, N, L);
      linear(C, N, L);
      linear(C, R, L);
      linear(R, C, L);
      t.scan += 8 * L * C * N;
    }
  }
};

}  // namespace

Counts count_params_flops(const ModelConfig& config, std::int64_t H, std::int64_t W) {
  Counter k{config, {}};
  const auto C = config.channels;
  const double a = config.alpha;
  const auto T = static_cast<double>(config.tasks.size());

  // encoder
  std::int64_t h = H / 4, w = W / 4;
  k.linear(48, static_cast<double>(C), static_cast<double>(h * w));
  std::int64_t c = C;
  for (int s = 0; s < 3; ++s) {
    h /= 2;
    w /= 2;
    const double pos = static_cast<double>(h * w);
    k.linear(4.0 * c, 2.0 * c, pos);
    k.conv3x3(2.0 * c, 2.0 * c, pos);
    k.conv3x3(2.0 * c, 2.0 * c, pos);
    c *= 2;
  }

  // decoder, starting from H/32
  for (int s = 1; s <= config.stages; ++s) {
    const double in = static_cast<double>(8 * C >> (s - 1));
    const auto ch = (8 * C >> (s - 1)) / 2;
    const double chd = static_cast<double>(ch);
    const double pin = static_cast<double>(h * w);
    h *= 2;
    w *= 2;
    const double pos = static_cast<double>(h * w);
    const auto inner = static_cast<std::int64_t>(a * ch);
    const double ind = static_cast<double>(inner);
    for (int t = 0; t < static_cast<int>(T); ++t) {
      k.linear(in, 2 * in, pin);
      k.conv1x1(in, chd, pos);
      for (int b = 0; b < 2; ++b) {
        k.linear(chd, ind, pos);
        k.depthwise(ind, pos);
        k.mixer(inner, h, w);
        k.linear(chd, ind, pos);
        k.linear(ind, chd, pos);
      }
    }
    if (config.ctm == CtmKind::fctm) {
      k.linear(T * chd, ind, pos);
      k.depthwise(ind, pos);
      k.mixer(inner, h, w);
      for (int t = 0; t < static_cast<int>(T); ++t) {
        k.linear(chd, ind, pos);
        k.depthwise(ind, pos);
        k.mixer(inner, h, w);
        k.linear(chd, ind, pos);
        k.linear(ind, chd, pos);
      }
    } else if (config.ctm == CtmKind::sctm) {
      k.conv3x3(T * chd, ind, pos);
      k.conv3x3(ind, ind, pos);
      for (int t = 0; t < static_cast<int>(T); ++t) {
        k.linear(chd, ind, pos);
        k.depthwise(ind, pos);
        k.mixer(inner, h, w);
        k.linear(chd, ind, pos);
        k.linear(ind, chd, pos);
      }
    }
  }

  // heads read H/4 features (upsampled when stages are truncated)
  const double hc = static_cast<double>(8 * C >> config.stages);
  const double p4 = static_cast<double>((H / 4) * (W / 4));
  for (const auto& task : config.tasks) {
    const double out = static_cast<double>(task.out_dim);
    if (config.head == HeadKind::dense) {
      k.linear(hc, 16 * hc, p4);
      k.linear(hc, out, 16 * p4);
    } else {
      k.conv3x3(hc, hc, p4);
      k.linear(hc, out, p4);
    }
  }

  Counts counts;
  counts.breakdown = k.t;
  counts.flops = k.t.total();
  counts.params = Model(config).store().count();
  return counts;
}

}  // namespace mtk::model
