#pragma once

// Independent loop-nest oracles used by the unit and acceptance tests. They
// share no code with the library beyond the Tensor container and the
// parameter struct layout.

#include <cmath>
#include <vector>

#include "mtk/ssm.hpp"

namespace oracles {

using mtk::Tensor;

inline double softplus(double z) { return z > 20 ? z : std::log1p(std::exp(z)); }

// S6 on one [L,C] sequence, parameters generated from src. Every hidden
// state h_t is materialised.
inline Tensor scan(const mtk::ssm::SsmParams& p, const Tensor& x, const Tensor& src) {
  const auto L = x.dim(0), C = x.dim(1), N = p.state(), R = p.rank();
  std::vector<std::vector<std::vector<double>>> h(
      L + 1, std::vector<std::vector<double>>(C, std::vector<double>(N, 0.0)));
  Tensor y({L, C});
  for (std::int64_t t = 0; t < L; ++t) {
    std::vector<double> bt(N, 0.0), ct(N, 0.0), low(R, 0.0);
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t c = 0; c < C; ++c) {
        bt[n] += src[t * C + c] * p.w_b[c * N + n] / static_cast<double>(C);
        ct[n] += src[t * C + c] * p.w_c[c * N + n] / static_cast<double>(C);
      }
    }
    for (std::int64_t r = 0; r < R; ++r)
      for (std::int64_t c = 0; c < C; ++c) low[r] += src[t * C + c] * p.w_dt[c * R + r];
    for (std::int64_t c = 0; c < C; ++c) {
      double z = p.dt_bias[c];
      for (std::int64_t r = 0; r < R; ++r) z += low[r] * p.w_dt_up[r * C + c];
      const double dt = softplus(z);
      double out = p.d_skip[c] * x[t * C + c];
      for (std::int64_t n = 0; n < N; ++n) {
        const double a = -std::exp(p.a_log[c * N + n]);
        h[t + 1][c][n] = std::exp(dt * a) * h[t][c][n] + dt * bt[n] * x[t * C + c];
        out += ct[n] * h[t + 1][c][n];
      }
      y[t * C + c] = out;
    }
  }
  return y;
}

// Row-major index visited at step k of each traversal on an H x W grid.
inline std::int64_t visit(std::int64_t H, std::int64_t W, int dir, std::int64_t k) {
  const std::int64_t n = H * W;
  const std::int64_t kk = dir >= 2 ? n - 1 - k : k;
  if (dir % 2 == 0) return kk;
  return (kk % H) * W + kk / H;  // column-major: kk = c*H + r
}

// Four-direction scan of a [1,H,W,C] map composed by hand from scan().
inline Tensor css2d(const std::vector<mtk::ssm::SsmParams>& p, const Tensor& q, const Tensor& s,
                    const std::vector<int>& dirs = {0, 1, 2, 3}) {
  const auto H = q.dim(1), W = q.dim(2), C = q.dim(3);
  Tensor out({1, H, W, C});
  for (int d : dirs) {
    Tensor qs({H * W, C}), ss({H * W, C});
    for (std::int64_t k = 0; k < H * W; ++k) {
      const auto pos = visit(H, W, d, k);
      for (std::int64_t c = 0; c < C; ++c) {
        qs[k * C + c] = q[pos * C + c];
        ss[k * C + c] = s[pos * C + c];
      }
    }
    const Tensor y = scan(p[static_cast<std::size_t>(d)], qs, ss);
    for (std::int64_t k = 0; k < H * W; ++k) {
      const auto pos = visit(H, W, d, k);
      for (std::int64_t c = 0; c < C; ++c) out[pos * C + c] += y[k * C + c];
    }
  }
  return out;
}

// 3x3 / 1x1 / depthwise convolution with zero padding, channel-last.
inline Tensor conv(const Tensor& x, const Tensor& w, int k, bool depthwise) {
  const auto B = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
  const auto Co = depthwise ? Ci : w.dim(w.ndim() - 1);
  const int r = k / 2;
  Tensor y({B, H, W, Co});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < H; ++i)
      for (std::int64_t j = 0; j < W; ++j)
        for (std::int64_t o = 0; o < Co; ++o) {
          double acc = 0;
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) {
              const auto ii = i + dy - r, jj = j + dx - r;
              if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
              const double* px = x.data() + ((b * H + ii) * W + jj) * Ci;
              if (depthwise) {
                acc += px[o] * w[(dy * 3 + dx) * Ci + o];
              } else {
                for (std::int64_t c = 0; c < Ci; ++c)
                  acc += px[c] * w[((dy * k + dx) * Ci + c) * Co + o];
              }
            }
          y[((b * H + i) * W + j) * Co + o] = acc;
        }
  return y;
}

}  // namespace oracles
