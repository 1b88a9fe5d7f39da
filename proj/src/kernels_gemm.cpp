#include <algorithm>
#include <vector>

#include "mtk/kernels.hpp"

namespace mtk::kernels {

void gemm_reference(index_t M, index_t K, index_t N, const double* A, const double* B, double* C,
                    bool accumulate) {
  if (!accumulate) std::fill(C, C + M * N, 0.0);
  for (index_t i = 0; i < M; ++i) {
    for (index_t k = 0; k < K; ++k) {
      const double a = A[i * K + k];
      for (index_t j = 0; j < N; ++j) C[i * N + j] += a * B[k * N + j];
    }
  }
}

void gemm(index_t M, index_t K, index_t N, const double* A, const double* B, double* C,
          bool accumulate) {
  // Four rows share each streamed row of B.
  const index_t blocks = (M + 3) / 4;
#pragma omp parallel for schedule(static)
  for (index_t blk = 0; blk < blocks; ++blk) {
    const index_t i0 = blk * 4;
    const index_t rows = std::min<index_t>(4, M - i0);
    double* c0 = C + i0 * N;
    if (!accumulate) std::fill(c0, c0 + rows * N, 0.0);
    if (rows == 4) {
      double* c1 = c0 + N;
      double* c2 = c1 + N;
      double* c3 = c2 + N;
      const double* a0 = A + i0 * K;
      for (index_t k = 0; k < K; ++k) {
        const double v0 = a0[k], v1 = a0[K + k], v2 = a0[2 * K + k], v3 = a0[3 * K + k];
        const double* b = B + k * N;
        for (index_t j = 0; j < N; ++j) {
          c0[j] += v0 * b[j];
          c1[j] += v1 * b[j];
          c2[j] += v2 * b[j];
          c3[j] += v3 * b[j];
        }
      }
    } else {
      for (index_t r = 0; r < rows; ++r) {
        double* c = c0 + r * N;
        for (index_t k = 0; k < K; ++k) {
          const double a = A[(i0 + r) * K + k];
          const double* b = B + k * N;
          for (index_t j = 0; j < N; ++j) c[j] += a * b[j];
        }
      }
    }
  }
}

void gemm_tn_reference(index_t M, index_t K, index_t N, const double* A, const double* G,
                       double* C) {
  for (index_t i = 0; i < M; ++i) {
    for (index_t k = 0; k < K; ++k) {
      const double a = A[i * K + k];
      for (index_t j = 0; j < N; ++j) C[k * N + j] += a * G[i * N + j];
    }
  }
}

void gemm_tn(index_t M, index_t K, index_t N, const double* A, const double* G, double* C) {
  constexpr index_t kb = 16;
  const index_t blocks = (K + kb - 1) / kb;
#pragma omp parallel for schedule(static)
  for (index_t blk = 0; blk < blocks; ++blk) {
    const index_t k0 = blk * kb;
    const index_t k1 = std::min(K, k0 + kb);
    for (index_t i = 0; i < M; ++i) {
      const double* g = G + i * N;
      for (index_t k = k0; k < k1; ++k) {
        const double a = A[i * K + k];
        double* c = C + k * N;
        for (index_t j = 0; j < N; ++j) c[j] += a * g[j];
      }
    }
  }
}

void gemm_nt(index_t M, index_t N, index_t K, const double* G, const double* B, double* C) {
  std::vector<double> bt(static_cast<std::size_t>(N * K));
  for (index_t k = 0; k < K; ++k)
    for (index_t j = 0; j < N; ++j) bt[j * K + k] = B[k * N + j];
  gemm(M, N, K, G, bt.data(), C, true);
}

}  // namespace mtk::kernels
