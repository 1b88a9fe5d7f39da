#include "mtk/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "mtk/kernels.hpp"
#include "mtk/ops.hpp"
#include "mtk/scan2d.hpp"
#include "mtk/ssm.hpp"

namespace mtk::oracle {

namespace {

Tensor random(Shape s, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(s));
  for (double& v : t.values()) v = rng.uniform(-scale, scale);
  return t;
}

ssm::SsmParams random_params(std::int64_t C, std::int64_t N, Rng& rng) {
  auto p = ssm::SsmParams::init(C, N, rng);
  for (Tensor* t : {&p.a_log, &p.d_skip, &p.dt_bias}) {
    for (double& v : t->values()) v += rng.uniform(-0.3, 0.3);
  }
  return p;
}

// y for one [L,C] sequence with every h_t stored.
Tensor scan_brute(const ssm::SsmParams& p, const Tensor& x, const Tensor& src) {
  const auto L = x.dim(0), C = x.dim(1), N = p.state(), R = p.rank();
  std::vector<double> bs(L * N), cs(L * N), dt(L * C);
  for (std::int64_t t = 0; t < L; ++t) {
    for (std::int64_t n = 0; n < N; ++n) {
      double sb = 0, sc = 0;
      for (std::int64_t c = 0; c < C; ++c) {
        sb += src[t * C + c] * p.w_b[c * N + n];
        sc += src[t * C + c] * p.w_c[c * N + n];
      }
      bs[t * N + n] = sb / static_cast<double>(C);
      cs[t * N + n] = sc / static_cast<double>(C);
    }
    std::vector<double> low(R);
    for (std::int64_t r = 0; r < R; ++r) {
      for (std::int64_t c = 0; c < C; ++c) low[r] += src[t * C + c] * p.w_dt[c * R + r];
    }
    for (std::int64_t c = 0; c < C; ++c) {
      double z = p.dt_bias[c];
      for (std::int64_t r = 0; r < R; ++r) z += low[r] * p.w_dt_up[r * C + c];
      dt[t * C + c] = z > 20 ? z : std::log1p(std::exp(z));
    }
  }
  std::vector<double> h((L + 1) * C * N, 0.0);
  Tensor y({L, C});
  for (std::int64_t t = 0; t < L; ++t) {
    for (std::int64_t c = 0; c < C; ++c) {
      double acc = p.d_skip[c] * x[t * C + c];
      for (std::int64_t n = 0; n < N; ++n) {
        const double a = -std::exp(p.a_log[c * N + n]);
        const double d = dt[t * C + c];
        double& cur = h[((t + 1) * C + c) * N + n];
        cur = std::exp(d * a) * h[(t * C + c) * N + n] + d * bs[t * N + n] * x[t * C + c];
        acc += cs[t * N + n] * cur;
      }
      y[t * C + c] = acc;
    }
  }
  return y;
}

Tensor conv3x3_naive(const Tensor& x, const Tensor& w) {
  const auto B = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3), Co = w.dim(3);
  Tensor y({B, H, W, Co});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < H; ++i)
      for (std::int64_t j = 0; j < W; ++j)
        for (std::int64_t o = 0; o < Co; ++o) {
          double s = 0;
          for (std::int64_t dy = 0; dy < 3; ++dy)
            for (std::int64_t dx = 0; dx < 3; ++dx)
              for (std::int64_t c = 0; c < Ci; ++c) {
                const auto ii = i + dy - 1, jj = j + dx - 1;
                if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
                s += x[((b * H + ii) * W + jj) * Ci + c] * w[((dy * 3 + dx) * Ci + c) * Co + o];
              }
          y[((b * H + i) * W + j) * Co + o] = s;
        }
  return y;
}

Tensor attention_naive(const Tensor& q, const Tensor& k, const Tensor& v) {
  const auto L = q.dim(0), D = q.dim(1);
  Tensor out({L, D});
  std::vector<double> s(L);
  for (std::int64_t i = 0; i < L; ++i) {
    double m = -INFINITY;
    for (std::int64_t j = 0; j < L; ++j) {
      double dot = 0;
      for (std::int64_t d = 0; d < D; ++d) dot += q[i * D + d] * k[j * D + d];
      s[j] = dot / std::sqrt(static_cast<double>(D));
      m = std::max(m, s[j]);
    }
    double z = 0;
    for (auto& e : s) z += (e = std::exp(e - m));
    for (std::int64_t d = 0; d < D; ++d) {
      double acc = 0;
      for (std::int64_t j = 0; j < L; ++j) acc += s[j] / z * v[j * D + d];
      out[i * D + d] = acc;
    }
  }
  return out;
}

}  // namespace

std::vector<Result> run_all(std::uint64_t seed) {
  Rng rng(seed);
  Result seq{"selective_scan_seq_vs_bruteforce", 0, 1e-12, 0};
  Result chunked{"chunked_vs_sequential", 0, 1e-10, 0};
  Result cross{"cross_scan_vs_bruteforce", 0, 1e-12, 0};
  Result degenerate{"cross_scan_self_identical", 0, 0, 0};
  for (int i = 0; i < 100; ++i) {
    const auto L = 1 + rng.below(32), C = 1 + rng.below(8), N = 1 + rng.below(8);
    const auto p = random_params(C, N, rng);
    const Tensor x = random({L, C}, rng), s = random({L, C}, rng);
    const Tensor y = ssm::selective_scan_seq(p, x, x);
    seq.max_err = std::max(seq.max_err, max_abs_diff(y, scan_brute(p, x, x)));
    ++seq.cases;
    for (std::int64_t chunk : {std::int64_t{1}, std::int64_t{2}, std::int64_t{7}, L}) {
      chunked.max_err =
          std::max(chunked.max_err, max_abs_diff(ssm::selective_scan_chunked(p, x, x, chunk), y));
      ++chunked.cases;
    }
    cross.max_err = std::max(cross.max_err, max_abs_diff(ssm::cross_scan(p, x, s), scan_brute(p, x, s)));
    ++cross.cases;
    degenerate.max_err = std::max(degenerate.max_err, max_abs_diff(ssm::cross_scan(p, x, x), y));
    ++degenerate.cases;
  }

  Result css{"css2d_self_identical_to_ss2d", 0, 0, 0};
  for (int i = 0; i < 20; ++i) {
    const auto H = 1 + rng.below(6), W = 1 + rng.below(6), C = 1 + rng.below(6),
               N = 1 + rng.below(6);
    scan2d::Ss2dParams p;
    for (auto& d : p.dir) d = random_params(C, N, rng);
    const Tensor q = random({1, H, W, C}, rng);
    css.max_err = std::max(css.max_err, max_abs_diff(scan2d::css2d(p, q, q), scan2d::ss2d(p, q)));
    ++css.cases;
  }

  Result conv{"conv3x3_vs_naive", 0, 1e-12, 0};
  for (int i = 0; i < 10; ++i) {
    const auto B = 1 + rng.below(2), H = 1 + rng.below(6), W = 1 + rng.below(6),
               Ci = 1 + rng.below(5), Co = 1 + rng.below(5);
    const Tensor x = random({B, H, W, Ci}, rng), w = random({3, 3, Ci, Co}, rng);
    Tape tape;
    const Tensor y = ops::conv2d(tape.constant(x), ops::ConvKind::k3x3, tape.constant(w)).value();
    conv.max_err = std::max(conv.max_err, max_abs_diff(y, conv3x3_naive(x, w)));
    ++conv.cases;
  }

  Result attn{"attention_vs_naive", 0, 1e-12, 0};
  for (int i = 0; i < 10; ++i) {
    const auto L = 1 + rng.below(40), D = 1 + rng.below(8);
    const Tensor q = random({L, D}, rng), k = random({L, D}, rng), v = random({L, D}, rng);
    Tensor out({L, D});
    kernels::attention<double>(L, D, q.data(), k.data(), v.data(), out.data());
    attn.max_err = std::max(attn.max_err, max_abs_diff(out, attention_naive(q, k, v)));
    ++attn.cases;
  }
  return {seq, chunked, cross, degenerate, css, conv, attn};
}

}  // namespace mtk::oracle
