#include <algorithm>
#include <cstring>

#include "mtk/kernels.hpp"

namespace mtk::kernels {

void im2col3x3(index_t B, index_t H, index_t W, index_t C, const double* x, double* cols) {
  const index_t row = 9 * C;
#pragma omp parallel for collapse(2) schedule(static)
  for (index_t b = 0; b < B; ++b) {
    for (index_t h = 0; h < H; ++h) {
      for (index_t w = 0; w < W; ++w) {
        double* dst = cols + ((b * H + h) * W + w) * row;
        for (index_t dy = 0; dy < 3; ++dy) {
          const index_t hh = h + dy - 1;
          for (index_t dx = 0; dx < 3; ++dx) {
            const index_t ww = w + dx - 1;
            double* out = dst + (dy * 3 + dx) * C;
            if (hh < 0 || hh >= H || ww < 0 || ww >= W) {
              std::fill(out, out + C, 0.0);
            } else {
              std::memcpy(out, x + ((b * H + hh) * W + ww) * C, sizeof(double) * C);
            }
          }
        }
      }
    }
  }
}

void col2im3x3(index_t B, index_t H, index_t W, index_t C, const double* cols, double* gx) {
  // Gather form: every input pixel pulls from the (at most nine) patches that
  // contain it, so output rows are independent.
  const index_t row = 9 * C;
#pragma omp parallel for collapse(2) schedule(static)
  for (index_t b = 0; b < B; ++b) {
    for (index_t h = 0; h < H; ++h) {
      for (index_t w = 0; w < W; ++w) {
        double* dst = gx + ((b * H + h) * W + w) * C;
        for (index_t dy = 0; dy < 3; ++dy) {
          const index_t oh = h - dy + 1;
          if (oh < 0 || oh >= H) continue;
          for (index_t dx = 0; dx < 3; ++dx) {
            const index_t ow = w - dx + 1;
            if (ow < 0 || ow >= W) continue;
            const double* src = cols + ((b * H + oh) * W + ow) * row + (dy * 3 + dx) * C;
            for (index_t c = 0; c < C; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

namespace {

inline void depthwise_row(index_t b, index_t h, index_t H, index_t W, index_t C, const double* x,
                          const double* w, double* y) {
  for (index_t ww = 0; ww < W; ++ww) {
    double* out = y + ((b * H + h) * W + ww) * C;
    std::fill(out, out + C, 0.0);
    for (index_t dy = 0; dy < 3; ++dy) {
      const index_t hh = h + dy - 1;
      if (hh < 0 || hh >= H) continue;
      for (index_t dx = 0; dx < 3; ++dx) {
        const index_t xx = ww + dx - 1;
        if (xx < 0 || xx >= W) continue;
        const double* in = x + ((b * H + hh) * W + xx) * C;
        const double* k = w + (dy * 3 + dx) * C;
        for (index_t c = 0; c < C; ++c) out[c] += in[c] * k[c];
      }
    }
  }
}

}  // namespace

void depthwise3x3_reference(index_t B, index_t H, index_t W, index_t C, const double* x,
                            const double* w, double* y) {
  for (index_t b = 0; b < B; ++b)
    for (index_t h = 0; h < H; ++h) depthwise_row(b, h, H, W, C, x, w, y);
}

void depthwise3x3(index_t B, index_t H, index_t W, index_t C, const double* x, const double* w,
                  double* y) {
#pragma omp parallel for collapse(2) schedule(static)
  for (index_t b = 0; b < B; ++b)
    for (index_t h = 0; h < H; ++h) depthwise_row(b, h, H, W, C, x, w, y);
}

void depthwise3x3_backward(index_t B, index_t H, index_t W, index_t C, const double* x,
                           const double* w, const double* gy, double* gx, double* gw) {
  if (gx) {
#pragma omp parallel for collapse(2) schedule(static)
    for (index_t b = 0; b < B; ++b) {
      for (index_t h = 0; h < H; ++h) {
        for (index_t ww = 0; ww < W; ++ww) {
          double* dst = gx + ((b * H + h) * W + ww) * C;
          for (index_t dy = 0; dy < 3; ++dy) {
            const index_t oh = h - dy + 1;
            if (oh < 0 || oh >= H) continue;
            for (index_t dx = 0; dx < 3; ++dx) {
              const index_t ow = ww - dx + 1;
              if (ow < 0 || ow >= W) continue;
              const double* g = gy + ((b * H + oh) * W + ow) * C;
              const double* k = w + (dy * 3 + dx) * C;
              for (index_t c = 0; c < C; ++c) dst[c] += g[c] * k[c];
            }
          }
        }
      }
    }
  }
  if (gw) {
    // Kernel taps are independent; each sums over positions in a fixed order.
#pragma omp parallel for schedule(static)
    for (index_t tap = 0; tap < 9; ++tap) {
      const index_t dy = tap / 3, dx = tap % 3;
      double* k = gw + tap * C;
      for (index_t b = 0; b < B; ++b) {
        for (index_t h = 0; h < H; ++h) {
          const index_t hh = h + dy - 1;
          if (hh < 0 || hh >= H) continue;
          for (index_t ww = 0; ww < W; ++ww) {
            const index_t xx = ww + dx - 1;
            if (xx < 0 || xx >= W) continue;
            const double* g = gy + ((b * H + h) * W + ww) * C;
            const double* in = x + ((b * H + hh) * W + xx) * C;
            for (index_t c = 0; c < C; ++c) k[c] += g[c] * in[c];
          }
        }
      }
    }
  }
}

}  // namespace mtk::kernels
