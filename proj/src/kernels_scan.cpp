#include <cmath>
#include <vector>

#include "mtk/kernels.hpp"
#include "mtk/math.hpp"

namespace mtk::kernels {

namespace {

// Advances one (batch, channel) recurrence over [t0, t1) from state h.
// Writes y when non-null. tmp has room for `state` values.
template <class T>
inline void scan_channel(const ScanProblem<T>& p, index_t b, index_t c, index_t t0, index_t t1,
                         T* h, T* tmp, T* y) {
  const index_t L = p.length, C = p.channels, N = p.state;
  const T* arow = p.a + c * N;
  const T dskip = p.d ? p.d[c] : T(0);
  for (index_t t = t0; t < t1; ++t) {
    const index_t xi = (b * L + t) * C + c;
    const T dt = p.delta[xi];
    const T xv = p.x[xi];
    const T* brow = p.b + (b * L + t) * N;
    const T* crow = p.c + (b * L + t) * N;
    for (index_t n = 0; n < N; ++n) {
      const T abar = fast_exp(dt * arow[n]);
      const T bbar = dt * brow[n];
      h[n] = abar * h[n] + bbar * xv;
      tmp[n] = crow[n] * h[n];
    }
    if (y) {
      T acc = T(0);
      for (index_t n = 0; n < N; ++n) acc += tmp[n];
      y[xi] = acc + dskip * xv;
    }
  }
}

}  // namespace

template <class T>
void selective_scan_reference(const ScanProblem<T>& p, T* y) {
  const index_t L = p.length, C = p.channels, N = p.state;
  std::vector<T> h(static_cast<std::size_t>(N));
  for (index_t b = 0; b < p.batch; ++b) {
    for (index_t c = 0; c < C; ++c) {
      std::fill(h.begin(), h.end(), T(0));
      for (index_t t = 0; t < L; ++t) {
        const index_t xi = (b * L + t) * C + c;
        T acc = T(0);
        for (index_t n = 0; n < N; ++n) {
          const T abar = std::exp(p.delta[xi] * p.a[c * N + n]);
          const T bbar = p.delta[xi] * p.b[(b * L + t) * N + n];
          h[n] = abar * h[n] + bbar * p.x[xi];
          acc += p.c[(b * L + t) * N + n] * h[n];
        }
        y[xi] = acc + (p.d ? p.d[c] : T(0)) * p.x[xi];
      }
    }
  }
}

template <class T>
void selective_scan(const ScanProblem<T>& p, T* y) {
  const index_t N = p.state;
#pragma omp parallel
  {
    std::vector<T> h(static_cast<std::size_t>(N)), tmp(static_cast<std::size_t>(N));
#pragma omp for collapse(2) schedule(static)
    for (index_t b = 0; b < p.batch; ++b) {
      for (index_t c = 0; c < p.channels; ++c) {
        std::fill(h.begin(), h.end(), T(0));
        scan_channel(p, b, c, 0, p.length, h.data(), tmp.data(), y);
      }
    }
  }
}

template <class T>
void selective_scan_chunked(const ScanProblem<T>& p, index_t chunk, T* y) {
  const index_t L = p.length, C = p.channels, N = p.state, B = p.batch;
  if (chunk < 1) chunk = 1;
  const index_t chunks = (L + chunk - 1) / chunk;
  if (chunks <= 1) {
    selective_scan(p, y);
    return;
  }
  // [B, C, chunks, N]: local end state from zero, and the chunk's decay product.
  std::vector<T> local(static_cast<std::size_t>(B * C * chunks * N));
  std::vector<T> decay(local.size());
  std::vector<T> carry_in(local.size());

#pragma omp parallel
  {
    std::vector<T> h(static_cast<std::size_t>(N)), tmp(static_cast<std::size_t>(N));
#pragma omp for collapse(3) schedule(static)
    for (index_t b = 0; b < B; ++b) {
      for (index_t c = 0; c < C; ++c) {
        for (index_t k = 0; k < chunks; ++k) {
          const index_t t0 = k * chunk, t1 = std::min(L, t0 + chunk);
          const index_t base = ((b * C + c) * chunks + k) * N;
          T* prod = decay.data() + base;
          std::fill(h.begin(), h.end(), T(0));
          std::fill(prod, prod + N, T(1));
          for (index_t t = t0; t < t1; ++t) {
            const T dt = p.delta[(b * L + t) * C + c];
            for (index_t n = 0; n < N; ++n) prod[n] *= fast_exp(dt * p.a[c * N + n]);
          }
          scan_channel(p, b, c, t0, t1, h.data(), tmp.data(), static_cast<T*>(nullptr));
          std::copy(h.begin(), h.end(), local.begin() + base);
        }
      }
    }

    // Fixed left fold over chunks.
#pragma omp for collapse(2) schedule(static)
    for (index_t b = 0; b < B; ++b) {
      for (index_t c = 0; c < C; ++c) {
        std::fill(h.begin(), h.end(), T(0));
        for (index_t k = 0; k < chunks; ++k) {
          const index_t base = ((b * C + c) * chunks + k) * N;
          for (index_t n = 0; n < N; ++n) {
            carry_in[base + n] = h[n];
            h[n] = decay[base + n] * h[n] + local[base + n];
          }
        }
      }
    }

#pragma omp for collapse(3) schedule(static)
    for (index_t b = 0; b < B; ++b) {
      for (index_t c = 0; c < C; ++c) {
        for (index_t k = 0; k < chunks; ++k) {
          const index_t t0 = k * chunk, t1 = std::min(L, t0 + chunk);
          const index_t base = ((b * C + c) * chunks + k) * N;
          std::copy(carry_in.begin() + base, carry_in.begin() + base + N, h.begin());
          scan_channel(p, b, c, t0, t1, h.data(), tmp.data(), y);
        }
      }
    }
  }
}

void scan_discretized(index_t L, index_t C, index_t N, const double* abar, const double* bbar,
                      const double* c, const double* d, const double* x, double* y) {
  std::vector<double> h(static_cast<std::size_t>(N));
  for (index_t ch = 0; ch < C; ++ch) {
    std::fill(h.begin(), h.end(), 0.0);
    for (index_t t = 0; t < L; ++t) {
      double acc = 0.0;
      for (index_t n = 0; n < N; ++n) {
        const index_t i = (t * C + ch) * N + n;
        h[n] = abar[i] * h[n] + bbar[i] * x[t * C + ch];
        acc += c[t * N + n] * h[n];
      }
      y[t * C + ch] = acc + (d ? d[ch] : 0.0) * x[t * C + ch];
    }
  }
}

void selective_scan_backward(const ScanProblem<double>& p, const double* gy, const ScanGrads& g) {
  const index_t B = p.batch, L = p.length, C = p.channels, N = p.state;
  // A and D gradients sum over the batch; per-batch partials keep the
  // reduction order fixed.
  std::vector<double> ga_part(g.a ? static_cast<std::size_t>(B * C * N) : 0, 0.0);
  std::vector<double> gd_part(g.d ? static_cast<std::size_t>(B * C) : 0, 0.0);

#pragma omp parallel
  {
    std::vector<double> hs(static_cast<std::size_t>(L * N)), as(hs.size());
    std::vector<double> h(static_cast<std::size_t>(N)), carry(h.size()), t1(h.size()),
        t2(h.size());
#pragma omp for schedule(static)
    for (index_t b = 0; b < B; ++b) {
      for (index_t c = 0; c < C; ++c) {
        const double* arow = p.a + c * N;
        const double dskip = p.d ? p.d[c] : 0.0;
        std::fill(h.begin(), h.end(), 0.0);
        for (index_t t = 0; t < L; ++t) {
          const index_t xi = (b * L + t) * C + c;
          const double dt = p.delta[xi], xv = p.x[xi];
          const double* brow = p.b + (b * L + t) * N;
          double* hrow = hs.data() + t * N;
          double* arow_t = as.data() + t * N;
          for (index_t n = 0; n < N; ++n) {
            const double abar = fast_exp(dt * arow[n]);
            h[n] = abar * h[n] + (dt * brow[n]) * xv;
            arow_t[n] = abar;
            hrow[n] = h[n];
          }
        }
        std::fill(carry.begin(), carry.end(), 0.0);
        double* ga = g.a ? ga_part.data() + (b * C + c) * N : nullptr;
        for (index_t t = L - 1; t >= 0; --t) {
          const index_t xi = (b * L + t) * C + c;
          const double gyv = gy[xi];
          const double dt = p.delta[xi], xv = p.x[xi];
          const double* brow = p.b + (b * L + t) * N;
          const double* crow = p.c + (b * L + t) * N;
          const double* hrow = hs.data() + t * N;
          const double* arow_t = as.data() + t * N;
          for (index_t n = 0; n < N; ++n) {
            const double gh = gyv * crow[n] + carry[n];
            const double hprev = t > 0 ? hs[(t - 1) * N + n] : 0.0;
            const double gexp = gh * hprev * arow_t[n];  // d/d(dt*A)
            t1[n] = gh * brow[n];
            t2[n] = gexp * arow[n];
            if (ga) ga[n] += gexp * dt;
            if (g.b) g.b[(b * L + t) * N + n] += gh * dt * xv;
            if (g.c) g.c[(b * L + t) * N + n] += gyv * hrow[n];
            carry[n] = arow_t[n] * gh;
          }
          double s1 = 0.0, s2 = 0.0;
          for (index_t n = 0; n < N; ++n) {
            s1 += t1[n];
            s2 += t2[n];
          }
          if (g.x) g.x[xi] += gyv * dskip + dt * s1;
          if (g.delta) g.delta[xi] += s2 + xv * s1;
          if (g.d) gd_part[b * C + c] += gyv * xv;
        }
      }
    }
  }
  for (index_t b = 0; b < B; ++b) {
    if (g.a)
      for (index_t i = 0; i < C * N; ++i) g.a[i] += ga_part[b * C * N + i];
    if (g.d)
      for (index_t i = 0; i < C; ++i) g.d[i] += gd_part[b * C + i];
  }
}

template void selective_scan_reference<float>(const ScanProblem<float>&, float*);
template void selective_scan_reference<double>(const ScanProblem<double>&, double*);
template void selective_scan<float>(const ScanProblem<float>&, float*);
template void selective_scan<double>(const ScanProblem<double>&, double*);
template void selective_scan_chunked<float>(const ScanProblem<float>&, index_t, float*);
template void selective_scan_chunked<double>(const ScanProblem<double>&, index_t, double*);

}  // namespace mtk::kernels
