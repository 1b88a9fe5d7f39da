#pragma once

// Raw compute kernels. Each kernel exists in two forms: a plain serial
// `*_reference` loop nest kept for testing, and an OpenMP version used by the
// library. The OpenMP versions only split work across independent outputs and
// keep every reduction in the same order as the reference, so the two agree
// bit-for-bit (up to FMA contraction choices of the compiler).

#include <cstdint>

namespace mtk::kernels {

using index_t = std::int64_t;

// C[M,N] = A[M,K] * B[K,N]  (C += ... when accumulate)
void gemm_reference(index_t M, index_t K, index_t N, const double* A, const double* B, double* C,
                    bool accumulate);
void gemm(index_t M, index_t K, index_t N, const double* A, const double* B, double* C,
          bool accumulate);

// C[K,N] += A[M,K]^T * G[M,N]
void gemm_tn_reference(index_t M, index_t K, index_t N, const double* A, const double* G,
                       double* C);
void gemm_tn(index_t M, index_t K, index_t N, const double* A, const double* G, double* C);

// C[M,K] += G[M,N] * B[K,N]^T
void gemm_nt(index_t M, index_t N, index_t K, const double* G, const double* B, double* C);

// 3x3 patches with zero padding 1: cols[(b,h,w), (dy,dx,c)].
void im2col3x3(index_t B, index_t H, index_t W, index_t C, const double* x, double* cols);
// Adjoint of im2col3x3: scatter-adds cols back into gx.
void col2im3x3(index_t B, index_t H, index_t W, index_t C, const double* cols, double* gx);

// Depthwise 3x3, zero padding 1. w is [3,3,C].
void depthwise3x3_reference(index_t B, index_t H, index_t W, index_t C, const double* x,
                            const double* w, double* y);
void depthwise3x3(index_t B, index_t H, index_t W, index_t C, const double* x, const double* w,
                  double* y);
void depthwise3x3_backward(index_t B, index_t H, index_t W, index_t C, const double* x,
                           const double* w, const double* gy, double* gx, double* gw);

// Selective scan over [B, L, C] sequences with diagonal state [C, N]:
//   h_t = exp(delta_t * A) * h_{t-1} + (delta_t * B_t) * x_t
//   y_t = <C_t, h_t> + D * x_t
template <class T>
struct ScanProblem {
  index_t batch = 1;
  index_t length = 0;
  index_t channels = 0;
  index_t state = 0;
  const T* x = nullptr;      // [B, L, C]
  const T* delta = nullptr;  // [B, L, C], > 0
  const T* a = nullptr;      // [C, N], negative
  const T* b = nullptr;      // [B, L, N]
  const T* c = nullptr;      // [B, L, N]
  const T* d = nullptr;      // [C] or null
};

template <class T>
void selective_scan_reference(const ScanProblem<T>& p, T* y);
template <class T>
void selective_scan(const ScanProblem<T>& p, T* y);
// Time axis split into chunks; chunk summaries (decay product, local end
// state) are combined by a left fold in chunk order, then every chunk is
// replayed from its carried-in state. chunk >= length is the sequential path.
template <class T>
void selective_scan_chunked(const ScanProblem<T>& p, index_t chunk, T* y);

// Recurrence on already-discretized coefficients (single sequence):
// abar, bbar [L, C, N]; c [L, N]; d [C]; x [L, C].
void scan_discretized(index_t L, index_t C, index_t N, const double* abar, const double* bbar,
                      const double* c, const double* d, const double* x, double* y);

// Gradients are accumulated (+=) into the non-null outputs. `a` is the
// gradient with respect to A, shape [C, N].
struct ScanGrads {
  double* x = nullptr;
  double* delta = nullptr;
  double* a = nullptr;
  double* b = nullptr;
  double* c = nullptr;
  double* d = nullptr;
};
// Recomputes the hidden states of each channel instead of storing them.
void selective_scan_backward(const ScanProblem<double>& p, const double* gy, const ScanGrads& g);

// Single-head softmax attention over one sequence, q,k,v,out [L, dim].
template <class T>
void attention_reference(index_t L, index_t dim, const T* q, const T* k, const T* v, T* out);
template <class T>
void attention(index_t L, index_t dim, const T* q, const T* k, const T* v, T* out);

}  // namespace mtk::kernels
