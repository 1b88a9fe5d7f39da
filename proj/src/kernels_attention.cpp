#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mtk/kernels.hpp"

namespace mtk::kernels {

namespace {

template <class T>
void attention_row(index_t i, index_t L, index_t dim, const T* q, const T* k, const T* v, T* out,
                   std::vector<T>& scores) {
  const T scale = T(1) / std::sqrt(static_cast<T>(dim));
  const T* qi = q + i * dim;
  T mx = -std::numeric_limits<T>::infinity();
  for (index_t j = 0; j < L; ++j) {
    const T* kj = k + j * dim;
    T s = T(0);
    for (index_t e = 0; e < dim; ++e) s += qi[e] * kj[e];
    scores[j] = s * scale;
    mx = std::max(mx, scores[j]);
  }
  T denom = T(0);
  for (index_t j = 0; j < L; ++j) {
    scores[j] = std::exp(scores[j] - mx);
    denom += scores[j];
  }
  T* oi = out + i * dim;
  std::fill(oi, oi + dim, T(0));
  for (index_t j = 0; j < L; ++j) {
    const T w = scores[j] / denom;
    const T* vj = v + j * dim;
    for (index_t e = 0; e < dim; ++e) oi[e] += w * vj[e];
  }
}

}  // namespace

template <class T>
void attention_reference(index_t L, index_t dim, const T* q, const T* k, const T* v, T* out) {
  std::vector<T> scores(static_cast<std::size_t>(L));
  for (index_t i = 0; i < L; ++i) attention_row(i, L, dim, q, k, v, out, scores);
}

template <class T>
void attention(index_t L, index_t dim, const T* q, const T* k, const T* v, T* out) {
#pragma omp parallel
  {
    std::vector<T> scores(static_cast<std::size_t>(L));
#pragma omp for schedule(static)
    for (index_t i = 0; i < L; ++i) attention_row(i, L, dim, q, k, v, out, scores);
  }
}

template void attention_reference<float>(index_t, index_t, const float*, const float*,
                                         const float*, float*);
template void attention_reference<double>(index_t, index_t, const double*, const double*,
                                          const double*, double*);
template void attention<float>(index_t, index_t, const float*, const float*, const float*,
                               float*);
template void attention<double>(index_t, index_t, const double*, const double*, const double*,
                                double*);

}  // namespace mtk::kernels
