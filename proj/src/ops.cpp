#include "mtk/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "mtk/error.hpp"
#include "mtk/kernels.hpp"
#include "mtk/math.hpp"

namespace mtk::ops {

using kernels::index_t;

namespace {

thread_local FlopTally* g_tally = nullptr;

void count_linear(double flops) {
  if (g_tally) g_tally->linear += flops;
}
void count_conv(double flops) {
  if (g_tally) g_tally->conv += flops;
}

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw Error("usage", "op on an unbound Var");
  return *a.tape();
}

// Per-axis input strides of a broadcast operand (0 on broadcast axes).
struct Broadcast {
  Shape out;
  Shape sa, sb;
  bool same = false;
};

Broadcast broadcast_shapes(const Shape& a, const Shape& b) {
  Broadcast r;
  if (a == b) {
    r.out = a;
    r.same = true;
    return r;
  }
  if (a.size() != b.size()) {
    throw ShapeError("broadcast needs equal rank: " + to_string(a) + " vs " + to_string(b));
  }
  const std::size_t n = a.size();
  r.out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i] == b[i] || a[i] == 1 || b[i] == 1) {
      r.out[i] = std::max(a[i], b[i]);
    } else {
      throw ShapeError("cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
  }
  auto strides_for = [&](const Shape& s) {
    Shape st(n, 0);
    index_t acc = 1;
    for (int i = static_cast<int>(n) - 1; i >= 0; --i) {
      st[i] = (s[i] == 1 && r.out[i] != 1) ? 0 : acc;
      acc *= s[i];
    }
    return st;
  };
  r.sa = strides_for(a);
  r.sb = strides_for(b);
  return r;
}

// Calls f(out_index, a_index, b_index) for every output element in order.
template <class F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const index_t total = numel(bc.out);
  if (bc.same) {
    for (index_t i = 0; i < total; ++i) f(i, i, i);
    return;
  }
  const std::size_t n = bc.out.size();
  std::vector<index_t> idx(n, 0);
  index_t ia = 0, ib = 0;
  for (index_t i = 0; i < total; ++i) {
    f(i, ia, ib);
    for (int ax = static_cast<int>(n) - 1; ax >= 0; --ax) {
      ++idx[ax];
      ia += bc.sa[ax];
      ib += bc.sb[ax];
      if (idx[ax] < bc.out[ax]) break;
      ia -= bc.sa[ax] * bc.out[ax];
      ib -= bc.sb[ax] * bc.out[ax];
      idx[ax] = 0;
    }
  }
}

enum class BinaryKind { add, sub, mul };

Var binary(BinaryKind kind, Var a, Var b) {
  Tape& tape = tape_of(a);
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  const Broadcast bc = broadcast_shapes(va.shape(), vb.shape());
  Tensor out(bc.out);
  double* o = out.data();
  const double* pa = va.data();
  const double* pb = vb.data();
  switch (kind) {
    case BinaryKind::add:
      for_each_broadcast(bc, [&](index_t i, index_t ia, index_t ib) { o[i] = pa[ia] + pb[ib]; });
      break;
    case BinaryKind::sub:
      for_each_broadcast(bc, [&](index_t i, index_t ia, index_t ib) { o[i] = pa[ia] - pb[ib]; });
      break;
    case BinaryKind::mul:
      for_each_broadcast(bc, [&](index_t i, index_t ia, index_t ib) { o[i] = pa[ia] * pb[ib]; });
      break;
  }
  return tape.record(std::move(out), {a, b}, [a, b, kind, bc](Tape& t, const Tensor& g) {
    const double* pg = g.data();
    const double* pa = a.value().data();
    const double* pb = b.value().data();
    if (t.requires_grad(a)) {
      double* ga = t.grad_slot(a).data();
      if (kind == BinaryKind::mul) {
        for_each_broadcast(bc, [&](index_t i, index_t ia, index_t ib) { ga[ia] += pg[i] * pb[ib]; });
      } else {
        for_each_broadcast(bc, [&](index_t i, index_t ia, index_t) { ga[ia] += pg[i]; });
      }
    }
    if (t.requires_grad(b)) {
      double* gb = t.grad_slot(b).data();
      switch (kind) {
        case BinaryKind::add:
          for_each_broadcast(bc, [&](index_t i, index_t, index_t ib) { gb[ib] += pg[i]; });
          break;
        case BinaryKind::sub:
          for_each_broadcast(bc, [&](index_t i, index_t, index_t ib) { gb[ib] -= pg[i]; });
          break;
        case BinaryKind::mul:
          for_each_broadcast(bc,
                             [&](index_t i, index_t ia, index_t ib) { gb[ib] += pg[i] * pa[ia]; });
          break;
      }
    }
  });
}

// Unary op given value and derivative functions of the input.
template <class Fwd, class Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  Tape& tape = tape_of(a);
  const Tensor& va = a.value();
  Tensor out(va.shape());
  const double* pa = va.data();
  double* o = out.data();
  const index_t n = va.numel();
  for (index_t i = 0; i < n; ++i) o[i] = fwd(pa[i]);
  return tape.record(std::move(out), {a}, [a, deriv](Tape& t, const Tensor& g) {
    const double* x = a.value().data();
    const double* pg = g.data();
    double* ga = t.grad_slot(a).data();
    const index_t n = g.numel();
    for (index_t i = 0; i < n; ++i) ga[i] += pg[i] * deriv(x[i]);
  });
}

void check_rank(const Var& x, int rank, const char* op) {
  if (x.value().ndim() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(x.shape()));
  }
}

void add_bias(Tensor& y, const Tensor& bias) {
  const index_t C = bias.numel();
  const index_t M = y.numel() / C;
  double* py = y.data();
  const double* pb = bias.data();
  for (index_t m = 0; m < M; ++m)
    for (index_t c = 0; c < C; ++c) py[m * C + c] += pb[c];
}

void bias_grad(const Tensor& g, Tensor& gb) {
  const index_t C = gb.numel();
  const index_t M = g.numel() / C;
  const double* pg = g.data();
  double* out = gb.data();
  for (index_t m = 0; m < M; ++m)
    for (index_t c = 0; c < C; ++c) out[c] += pg[m * C + c];
}

}  // namespace

FlopScope::FlopScope(FlopTally& tally) : previous_(g_tally) { g_tally = &tally; }
FlopScope::~FlopScope() { g_tally = previous_; }
FlopTally* active_flop_tally() { return g_tally; }

Var elementwise(ElementwiseKind kind, Var a, std::optional<Var> b) {
  const bool binary_kind = kind == ElementwiseKind::add || kind == ElementwiseKind::mul;
  if (binary_kind != b.has_value()) {
    throw ShapeError("elementwise: operand count does not match the op kind");
  }
  switch (kind) {
    case ElementwiseKind::add: return add(a, *b);
    case ElementwiseKind::mul: return mul(a, *b);
    case ElementwiseKind::silu: return silu(a);
    case ElementwiseKind::sigmoid: return sigmoid(a);
    case ElementwiseKind::relu: return relu(a);
    case ElementwiseKind::softplus: return softplus(a);
    case ElementwiseKind::exp: return exp(a);
    case ElementwiseKind::neg: return neg(a);
  }
  throw Error("usage", "unknown elementwise kind");
}

Var add(Var a, Var b) { return binary(BinaryKind::add, a, b); }
Var sub(Var a, Var b) { return binary(BinaryKind::sub, a, b); }
Var mul(Var a, Var b) { return binary(BinaryKind::mul, a, b); }

Var silu(Var a) {
  return unary(
      a, [](double x) { return mtk::silu(x); },
      [](double x) {
        const double s = mtk::sigmoid(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Var sigmoid(Var a) {
  return unary(
      a, [](double x) { return mtk::sigmoid(x); },
      [](double x) {
        const double s = mtk::sigmoid(x);
        return s * (1.0 - s);
      });
}

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softplus(Var a) {
  return unary(
      a, [](double x) { return mtk::softplus(x); }, [](double x) { return mtk::sigmoid(x); });
}

Var exp(Var a) {
  return unary(
      a, [](double x) { return fast_exp(x); }, [](double x) { return fast_exp(x); });
}

Var neg(Var a) {
  return unary(
      a, [](double x) { return -x; }, [](double) { return -1.0; });
}

Var scale(Var a, double s) {
  return unary(
      a, [s](double x) { return s * x; }, [s](double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(
      a, [s](double x) { return x + s; }, [](double) { return 1.0; });
}

Var linear(Var x, Var w, std::optional<Var> bias) {
  Tape& tape = tape_of(x);
  const Tensor& vx = x.value();
  const Tensor& vw = w.value();
  if (vw.ndim() != 2 || vx.ndim() < 1 || vx.dim(-1) != vw.dim(0)) {
    throw ShapeError("linear: input " + to_string(vx.shape()) + " vs weight " +
                     to_string(vw.shape()));
  }
  const index_t K = vw.dim(0), N = vw.dim(1), M = vx.numel() / K;
  if (bias && (bias->value().ndim() != 1 || bias->value().dim(0) != N)) {
    throw ShapeError("linear: bias " + to_string(bias->shape()) + " for " + std::to_string(N) +
                     " outputs");
  }
  Shape out_shape = vx.shape();
  out_shape.back() = N;
  Tensor y(out_shape);
  kernels::gemm(M, K, N, vx.data(), vw.data(), y.data(), false);
  if (bias) add_bias(y, bias->value());
  count_linear(2.0 * static_cast<double>(K * N * M));

  std::vector<Var> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return tape.record(std::move(y), inputs, [x, w, bias, M, K, N](Tape& t, const Tensor& g) {
    if (t.requires_grad(x)) {
      kernels::gemm_nt(M, N, K, g.data(), w.value().data(), t.grad_slot(x).data());
    }
    if (t.requires_grad(w)) {
      kernels::gemm_tn(M, K, N, x.value().data(), g.data(), t.grad_slot(w).data());
    }
    if (bias && t.requires_grad(*bias)) bias_grad(g, t.grad_slot(*bias));
  });
}

Var conv2d(Var x, ConvKind kind, Var w, std::optional<Var> bias) {
  check_rank(x, 4, "conv2d");
  const Tensor& vx = x.value();
  const Tensor& vw = w.value();
  const index_t B = vx.dim(0), H = vx.dim(1), W = vx.dim(2), Cin = vx.dim(3);
  const index_t positions = B * H * W;

  if (kind == ConvKind::k1x1) {
    if (vw.ndim() != 2 || vw.dim(0) != Cin) {
      throw ShapeError("conv2d 1x1: weight " + to_string(vw.shape()) + " for " +
                       std::to_string(Cin) + " input channels");
    }
    FlopTally* saved = g_tally;
    g_tally = nullptr;
    Var y = linear(x, w, bias);
    g_tally = saved;
    count_conv(2.0 * static_cast<double>(Cin * vw.dim(1) * positions));
    return y;
  }

  Tape& tape = tape_of(x);
  if (kind == ConvKind::k3x3_depthwise) {
    if (vw.ndim() != 3 || vw.dim(0) != 3 || vw.dim(1) != 3 || vw.dim(2) != Cin) {
      throw ShapeError("conv2d depthwise: weight " + to_string(vw.shape()) + " for " +
                       std::to_string(Cin) + " channels");
    }
    if (bias && bias->value().numel() != Cin) throw ShapeError("conv2d depthwise: bias extent");
    Tensor y(vx.shape());
    kernels::depthwise3x3(B, H, W, Cin, vx.data(), vw.data(), y.data());
    if (bias) add_bias(y, bias->value());
    count_conv(2.0 * 9.0 * static_cast<double>(Cin * positions));
    std::vector<Var> inputs{x, w};
    if (bias) inputs.push_back(*bias);
    return tape.record(std::move(y), inputs, [x, w, bias, B, H, W, Cin](Tape& t, const Tensor& g) {
      double* gx = t.requires_grad(x) ? t.grad_slot(x).data() : nullptr;
      double* gw = t.requires_grad(w) ? t.grad_slot(w).data() : nullptr;
      kernels::depthwise3x3_backward(B, H, W, Cin, x.value().data(), w.value().data(), g.data(), gx,
                                     gw);
      if (bias && t.requires_grad(*bias)) bias_grad(g, t.grad_slot(*bias));
    });
  }

  if (vw.ndim() != 4 || vw.dim(0) != 3 || vw.dim(1) != 3 || vw.dim(2) != Cin) {
    throw ShapeError("conv2d 3x3: weight " + to_string(vw.shape()) + " for " +
                     std::to_string(Cin) + " input channels");
  }
  const index_t Cout = vw.dim(3);
  if (bias && bias->value().numel() != Cout) throw ShapeError("conv2d 3x3: bias extent");
  const index_t K = 9 * Cin;
  std::vector<double> cols(static_cast<std::size_t>(positions * K));
  kernels::im2col3x3(B, H, W, Cin, vx.data(), cols.data());
  Tensor y({B, H, W, Cout});
  kernels::gemm(positions, K, Cout, cols.data(), vw.data(), y.data(), false);
  if (bias) add_bias(y, bias->value());
  count_conv(2.0 * static_cast<double>(K * Cout * positions));
  std::vector<Var> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return tape.record(std::move(y), inputs,
                     [x, w, bias, B, H, W, Cin, Cout, K, positions](Tape& t, const Tensor& g) {
                       if (t.requires_grad(w)) {
                         std::vector<double> cols(static_cast<std::size_t>(positions * K));
                         kernels::im2col3x3(B, H, W, Cin, x.value().data(), cols.data());
                         kernels::gemm_tn(positions, K, Cout, cols.data(), g.data(),
                                          t.grad_slot(w).data());
                       }
                       if (t.requires_grad(x)) {
                         std::vector<double> gcols(static_cast<std::size_t>(positions * K), 0.0);
                         kernels::gemm_nt(positions, Cout, K, g.data(), w.value().data(),
                                          gcols.data());
                         kernels::col2im3x3(B, H, W, Cin, gcols.data(), t.grad_slot(x).data());
                       }
                       if (bias && t.requires_grad(*bias)) bias_grad(g, t.grad_slot(*bias));
                     });
}

Var layernorm(Var x, Var gamma, Var beta, double eps) {
  Tape& tape = tape_of(x);
  const Tensor& vx = x.value();
  const index_t C = vx.dim(-1);
  if (gamma.value().numel() != C || beta.value().numel() != C) {
    throw ShapeError("layernorm: affine extent does not match last axis of " +
                     to_string(vx.shape()));
  }
  const index_t M = vx.numel() / C;
  Tensor y(vx.shape());
  const double* px = vx.data();
  const double* pg = gamma.value().data();
  const double* pb = beta.value().data();
  double* py = y.data();
#pragma omp parallel for schedule(static)
  for (index_t m = 0; m < M; ++m) {
    const double* row = px + m * C;
    double mu = 0.0;
    for (index_t c = 0; c < C; ++c) mu += row[c];
    mu /= static_cast<double>(C);
    double var = 0.0;
    for (index_t c = 0; c < C; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(C);
    const double rstd = 1.0 / std::sqrt(var + eps);
    for (index_t c = 0; c < C; ++c) py[m * C + c] = (row[c] - mu) * rstd * pg[c] + pb[c];
  }
  return tape.record(std::move(y), {x, gamma, beta}, [x, gamma, beta, eps, M, C](Tape& t,
                                                                                 const Tensor& g) {
    const double* px = x.value().data();
    const double* pgam = gamma.value().data();
    const double* pg = g.data();
    double* gx = t.requires_grad(x) ? t.grad_slot(x).data() : nullptr;
    double* ggam = t.requires_grad(gamma) ? t.grad_slot(gamma).data() : nullptr;
    double* gbet = t.requires_grad(beta) ? t.grad_slot(beta).data() : nullptr;
    std::vector<double> xhat(static_cast<std::size_t>(C));
    for (index_t m = 0; m < M; ++m) {
      const double* row = px + m * C;
      const double* grow = pg + m * C;
      double mu = 0.0;
      for (index_t c = 0; c < C; ++c) mu += row[c];
      mu /= static_cast<double>(C);
      double var = 0.0;
      for (index_t c = 0; c < C; ++c) var += (row[c] - mu) * (row[c] - mu);
      var /= static_cast<double>(C);
      const double rstd = 1.0 / std::sqrt(var + eps);
      double mean_g = 0.0, mean_gx = 0.0;
      for (index_t c = 0; c < C; ++c) {
        xhat[c] = (row[c] - mu) * rstd;
        const double gh = grow[c] * pgam[c];
        mean_g += gh;
        mean_gx += gh * xhat[c];
        if (ggam) ggam[c] += grow[c] * xhat[c];
        if (gbet) gbet[c] += grow[c];
      }
      if (!gx) continue;
      mean_g /= static_cast<double>(C);
      mean_gx /= static_cast<double>(C);
      for (index_t c = 0; c < C; ++c) {
        gx[m * C + c] += rstd * (grow[c] * pgam[c] - mean_g - xhat[c] * mean_gx);
      }
    }
  });
}

Var batchnorm2d(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
                bool training, double eps, double momentum) {
  check_rank(x, 4, "batchnorm2d");
  Tape& tape = tape_of(x);
  const Tensor& vx = x.value();
  const index_t C = vx.dim(3);
  const index_t M = vx.numel() / C;
  if (gamma.value().numel() != C || beta.value().numel() != C || running_mean.numel() != C ||
      running_var.numel() != C) {
    throw ShapeError("batchnorm2d: parameter extent does not match channels of " +
                     to_string(vx.shape()));
  }
  auto mean = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C), 0.0);
  auto rstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C), 0.0);
  const double* px = vx.data();
  if (training) {
    std::vector<double> var(static_cast<std::size_t>(C), 0.0);
    for (index_t m = 0; m < M; ++m)
      for (index_t c = 0; c < C; ++c) (*mean)[c] += px[m * C + c];
    for (index_t c = 0; c < C; ++c) (*mean)[c] /= static_cast<double>(M);
    for (index_t m = 0; m < M; ++m)
      for (index_t c = 0; c < C; ++c) {
        const double d = px[m * C + c] - (*mean)[c];
        var[c] += d * d;
      }
    for (index_t c = 0; c < C; ++c) {
      const double biased = var[c] / static_cast<double>(M);
      const double unbiased = M > 1 ? var[c] / static_cast<double>(M - 1) : biased;
      (*rstd)[c] = 1.0 / std::sqrt(biased + eps);
      running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * (*mean)[c];
      running_var[c] = (1.0 - momentum) * running_var[c] + momentum * unbiased;
    }
  } else {
    for (index_t c = 0; c < C; ++c) {
      (*mean)[c] = running_mean[c];
      (*rstd)[c] = 1.0 / std::sqrt(running_var[c] + eps);
    }
  }
  Tensor y(vx.shape());
  const double* pg = gamma.value().data();
  const double* pb = beta.value().data();
  double* py = y.data();
  for (index_t m = 0; m < M; ++m)
    for (index_t c = 0; c < C; ++c)
      py[m * C + c] = (px[m * C + c] - (*mean)[c]) * (*rstd)[c] * pg[c] + pb[c];

  return tape.record(std::move(y), {x, gamma, beta},
                     [x, gamma, beta, mean, rstd, training, M, C](Tape& t, const Tensor& g) {
                       const double* px = x.value().data();
                       const double* pgam = gamma.value().data();
                       const double* pg = g.data();
                       std::vector<double> sum_g(static_cast<std::size_t>(C), 0.0);
                       std::vector<double> sum_gx(static_cast<std::size_t>(C), 0.0);
                       for (index_t m = 0; m < M; ++m)
                         for (index_t c = 0; c < C; ++c) {
                           const double xh = (px[m * C + c] - (*mean)[c]) * (*rstd)[c];
                           sum_g[c] += pg[m * C + c];
                           sum_gx[c] += pg[m * C + c] * xh;
                         }
                       if (t.requires_grad(gamma)) {
                         double* gg = t.grad_slot(gamma).data();
                         for (index_t c = 0; c < C; ++c) gg[c] += sum_gx[c];
                       }
                       if (t.requires_grad(beta)) {
                         double* gb = t.grad_slot(beta).data();
                         for (index_t c = 0; c < C; ++c) gb[c] += sum_g[c];
                       }
                       if (!t.requires_grad(x)) return;
                       double* gx = t.grad_slot(x).data();
                       const double inv_m = 1.0 / static_cast<double>(M);
                       for (index_t m = 0; m < M; ++m)
                         for (index_t c = 0; c < C; ++c) {
                           const double k = pgam[c] * (*rstd)[c];
                           if (training) {
                             const double xh = (px[m * C + c] - (*mean)[c]) * (*rstd)[c];
                             gx[m * C + c] +=
                                 k * (pg[m * C + c] - sum_g[c] * inv_m - xh * sum_gx[c] * inv_m);
                           } else {
                             gx[m * C + c] += k * pg[m * C + c];
                           }
                         }
                     });
}

namespace {

struct Tap {
  index_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<Tap> bilinear_taps(index_t in, int scale) {
  std::vector<Tap> taps(static_cast<std::size_t>(in * scale));
  for (index_t o = 0; o < in * scale; ++o) {
    double src = (static_cast<double>(o) + 0.5) / scale - 0.5;
    if (src < 0.0) src = 0.0;
    const auto i0 = static_cast<index_t>(std::floor(src));
    const index_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Var interpolate_bilinear(Var x, int scale) {
  check_rank(x, 4, "interpolate_bilinear");
  if (scale < 1) throw ShapeError("interpolate_bilinear: scale must be >= 1");
  Tape& tape = tape_of(x);
  const Tensor& vx = x.value();
  const index_t B = vx.dim(0), H = vx.dim(1), W = vx.dim(2), C = vx.dim(3);
  const index_t OH = H * scale, OW = W * scale;
  const auto ty = bilinear_taps(H, scale);
  const auto tx = bilinear_taps(W, scale);
  Tensor y({B, OH, OW, C});
  const double* px = vx.data();
  double* py = y.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (index_t b = 0; b < B; ++b) {
    for (index_t oy = 0; oy < OH; ++oy) {
      const Tap& a = ty[oy];
      for (index_t ox = 0; ox < OW; ++ox) {
        const Tap& c2 = tx[ox];
        const double w00 = (1 - a.w1) * (1 - c2.w1), w01 = (1 - a.w1) * c2.w1;
        const double w10 = a.w1 * (1 - c2.w1), w11 = a.w1 * c2.w1;
        const double* r00 = px + ((b * H + a.i0) * W + c2.i0) * C;
        const double* r01 = px + ((b * H + a.i0) * W + c2.i1) * C;
        const double* r10 = px + ((b * H + a.i1) * W + c2.i0) * C;
        const double* r11 = px + ((b * H + a.i1) * W + c2.i1) * C;
        double* out = py + ((b * OH + oy) * OW + ox) * C;
        for (index_t c = 0; c < C; ++c)
          out[c] = w00 * r00[c] + w01 * r01[c] + w10 * r10[c] + w11 * r11[c];
      }
    }
  }
  return tape.record(std::move(y), {x}, [x, ty, tx, B, H, W, C, OH, OW](Tape& t, const Tensor& g) {
    double* gx = t.grad_slot(x).data();
    const double* pg = g.data();
#pragma omp parallel for schedule(static)
    for (index_t b = 0; b < B; ++b) {
      for (index_t oy = 0; oy < OH; ++oy) {
        const Tap& a = ty[oy];
        for (index_t ox = 0; ox < OW; ++ox) {
          const Tap& c2 = tx[ox];
          const double w00 = (1 - a.w1) * (1 - c2.w1), w01 = (1 - a.w1) * c2.w1;
          const double w10 = a.w1 * (1 - c2.w1), w11 = a.w1 * c2.w1;
          const double* src = pg + ((b * OH + oy) * OW + ox) * C;
          double* r00 = gx + ((b * H + a.i0) * W + c2.i0) * C;
          double* r01 = gx + ((b * H + a.i0) * W + c2.i1) * C;
          double* r10 = gx + ((b * H + a.i1) * W + c2.i0) * C;
          double* r11 = gx + ((b * H + a.i1) * W + c2.i1) * C;
          for (index_t c = 0; c < C; ++c) {
            r00[c] += w00 * src[c];
            r01[c] += w01 * src[c];
            r10[c] += w10 * src[c];
            r11[c] += w11 * src[c];
          }
        }
      }
    }
  });
}

namespace {

// Moves values between [B,H,W,C*r*r] and [B,rH,rW,C]; `expand` selects the direction.
void rearrange(const double* src, double* dst, index_t B, index_t H, index_t W, index_t C,
               index_t r, bool expand) {
#pragma omp parallel for collapse(2) schedule(static)
  for (index_t b = 0; b < B; ++b) {
    for (index_t h = 0; h < H; ++h) {
      for (index_t w = 0; w < W; ++w) {
        for (index_t i = 0; i < r; ++i) {
          for (index_t j = 0; j < r; ++j) {
            const index_t packed = ((b * H + h) * W + w) * C * r * r + (i * r + j) * C;
            const index_t spread = ((b * H * r + h * r + i) * W * r + w * r + j) * C;
            if (expand) {
              std::copy(src + packed, src + packed + C, dst + spread);
            } else {
              std::copy(src + spread, src + spread + C, dst + packed);
            }
          }
        }
      }
    }
  }
}

void rearrange_add(const double* src, double* dst, index_t B, index_t H, index_t W, index_t C,
                   index_t r, bool expand) {
  std::vector<double> tmp(static_cast<std::size_t>(B * H * W * C * r * r));
  rearrange(src, tmp.data(), B, H, W, C, r, expand);
  for (std::size_t i = 0; i < tmp.size(); ++i) dst[i] += tmp[i];
}

}  // namespace

Var rearrange_expand(Var x, int r) {
  check_rank(x, 4, "rearrange_expand");
  if (r < 1) throw ShapeError("rearrange_expand: r must be >= 1");
  Tape& tape = tape_of(x);
  const Tensor& vx = x.value();
  const index_t B = vx.dim(0), H = vx.dim(1), W = vx.dim(2), Cr = vx.dim(3);
  if (Cr % (r * r) != 0) {
    throw ShapeError("rearrange_expand: channels " + std::to_string(Cr) + " not divisible by " +
                     std::to_string(r * r));
  }
  const index_t C = Cr / (r * r);
  Tensor y({B, H * r, W * r, C});
  rearrange(vx.data(), y.data(), B, H, W, C, r, true);
  return tape.record(std::move(y), {x}, [x, B, H, W, C, r](Tape& t, const Tensor& g) {
    rearrange_add(g.data(), t.grad_slot(x).data(), B, H, W, C, r, false);
  });
}

Var rearrange_reduce(Var x, int r) {
  check_rank(x, 4, "rearrange_reduce");
  if (r < 1) throw ShapeError("rearrange_reduce: r must be >= 1");
  Tape& tape = tape_of(x);
  const Tensor& vx = x.value();
  const index_t B = vx.dim(0), HR = vx.dim(1), WR = vx.dim(2), C = vx.dim(3);
  if (HR % r != 0 || WR % r != 0) {
    throw ShapeError("rearrange_reduce: spatial extents of " + to_string(vx.shape()) +
                     " not divisible by " + std::to_string(r));
  }
  const index_t H = HR / r, W = WR / r;
  Tensor y({B, H, W, C * r * r});
  rearrange(vx.data(), y.data(), B, H, W, C, r, false);
  return tape.record(std::move(y), {x}, [x, B, H, W, C, r](Tape& t, const Tensor& g) {
    rearrange_add(g.data(), t.grad_slot(x).data(), B, H, W, C, r, true);
  });
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  Tape& tape = tape_of(xs[0]);
  Shape lead = xs[0].shape();
  lead.pop_back();
  index_t total = 0;
  std::vector<index_t> widths;
  for (const auto& v : xs) {
    Shape l = v.shape();
    const index_t c = l.back();
    l.pop_back();
    if (l != lead) throw ShapeError("concat_channels: leading extents differ");
    widths.push_back(c);
    total += c;
  }
  const index_t M = numel(lead);
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor y(out_shape);
  index_t off = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double* src = xs[k].value().data();
    const index_t c = widths[k];
    for (index_t m = 0; m < M; ++m) std::copy(src + m * c, src + (m + 1) * c, y.data() + m * total + off);
    off += c;
  }
  return tape.record(std::move(y), xs, [xs, widths, M, total](Tape& t, const Tensor& g) {
    index_t off = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const index_t c = widths[k];
      if (t.requires_grad(xs[k])) {
        double* dst = t.grad_slot(xs[k]).data();
        for (index_t m = 0; m < M; ++m)
          for (index_t j = 0; j < c; ++j) dst[m * c + j] += g[m * total + off + j];
      }
      off += c;
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tape& tape = tape_of(x);
  Tensor y = x.value().reshape(std::move(shape));
  return tape.record(std::move(y), {x}, [x](Tape& t, const Tensor& g) {
    t.accumulate(x, g.reshape(x.shape()));
  });
}

Var gather_rows(Var x, const std::vector<std::int64_t>& index) {
  check_rank(x, 3, "gather_rows");
  Tape& tape = tape_of(x);
  const Tensor& vx = x.value();
  const index_t B = vx.dim(0), P = vx.dim(1), C = vx.dim(2);
  const auto K = static_cast<index_t>(index.size());
  for (auto i : index) {
    if (i < 0 || i >= P) throw ShapeError("gather_rows: index out of range");
  }
  Tensor y({B, K, C});
  const double* px = vx.data();
  double* py = y.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (index_t b = 0; b < B; ++b)
    for (index_t k = 0; k < K; ++k)
      std::copy(px + (b * P + index[k]) * C, px + (b * P + index[k] + 1) * C, py + (b * K + k) * C);
  return tape.record(std::move(y), {x}, [x, index, B, P, C, K](Tape& t, const Tensor& g) {
    double* gx = t.grad_slot(x).data();
    const double* pg = g.data();
#pragma omp parallel for schedule(static)
    for (index_t b = 0; b < B; ++b)
      for (index_t k = 0; k < K; ++k) {
        double* dst = gx + (b * P + index[k]) * C;
        const double* src = pg + (b * K + k) * C;
        for (index_t c = 0; c < C; ++c) dst[c] += src[c];
      }
  });
}

Var sum(Var x) {
  Tape& tape = tape_of(x);
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return tape.record(Tensor::scalar(s), {x}, [x](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_slot(x);
    const double gv = g[0];
    for (index_t i = 0; i < gx.numel(); ++i) gx[i] += gv;
  });
}

Var mean(Var x) {
  const auto n = static_cast<double>(x.value().numel());
  return scale(sum(x), 1.0 / n);
}

Var dot(Var x, const Tensor& w) {
  Tape& tape = tape_of(x);
  if (w.shape() != x.shape()) {
    throw ShapeError("dot: " + to_string(x.shape()) + " vs " + to_string(w.shape()));
  }
  double s = 0.0;
  const double* px = x.value().data();
  for (index_t i = 0; i < w.numel(); ++i) s += px[i] * w[i];
  return tape.record(Tensor::scalar(s), {x}, [x, w](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_slot(x);
    for (index_t i = 0; i < gx.numel(); ++i) gx[i] += g[0] * w[i];
  });
}

namespace {

struct WindowGrid {
  index_t B, H, W, C, heads, dh, ws_h, ws_w, nwy, nwx;
  index_t windows() const { return B * nwy * nwx; }
  // Flat positions (within the batch image) of window `win`.
  std::vector<index_t> tokens(index_t win) const {
    const index_t wx = win % nwx;
    const index_t wy = (win / nwx) % nwy;
    const index_t b = win / (nwx * nwy);
    std::vector<index_t> out;
    for (index_t h = wy * ws_h; h < std::min(H, (wy + 1) * ws_h); ++h)
      for (index_t w = wx * ws_w; w < std::min(W, (wx + 1) * ws_w); ++w)
        out.push_back((b * H + h) * W + w);
    return out;
  }
};

WindowGrid make_grid(const Tensor& q, const Tensor& k, int window, int heads) {
  if (q.ndim() != 4 || k.shape() != q.shape()) {
    throw ShapeError("window_attention: q " + to_string(q.shape()) + " vs k " +
                     to_string(k.shape()));
  }
  if (window < 1 || heads < 1 || q.dim(3) % heads != 0) {
    throw ShapeError("window_attention: channels " + std::to_string(q.dim(3)) +
                     " not divisible by heads " + std::to_string(heads));
  }
  WindowGrid g{};
  g.B = q.dim(0);
  g.H = q.dim(1);
  g.W = q.dim(2);
  g.C = q.dim(3);
  g.heads = heads;
  g.dh = g.C / heads;
  g.ws_h = std::min<index_t>(window, g.H);
  g.ws_w = std::min<index_t>(window, g.W);
  g.nwy = (g.H + g.ws_h - 1) / g.ws_h;
  g.nwx = (g.W + g.ws_w - 1) / g.ws_w;
  return g;
}

// Softmax probabilities for one window/head, row-major [n, n].
void window_probs(const WindowGrid& g, const std::vector<index_t>& tok, index_t head,
                  const double* q, const double* k, double* p) {
  const auto n = static_cast<index_t>(tok.size());
  const double scale = 1.0 / std::sqrt(static_cast<double>(g.dh));
  for (index_t i = 0; i < n; ++i) {
    const double* qi = q + tok[i] * g.C + head * g.dh;
    double mx = -1e300;
    for (index_t j = 0; j < n; ++j) {
      const double* kj = k + tok[j] * g.C + head * g.dh;
      double s = 0.0;
      for (index_t e = 0; e < g.dh; ++e) s += qi[e] * kj[e];
      p[i * n + j] = s * scale;
      mx = std::max(mx, p[i * n + j]);
    }
    double denom = 0.0;
    for (index_t j = 0; j < n; ++j) {
      p[i * n + j] = fast_exp(p[i * n + j] - mx);
      denom += p[i * n + j];
    }
    for (index_t j = 0; j < n; ++j) p[i * n + j] /= denom;
  }
}

}  // namespace

std::vector<Tensor> window_attention_weights(const Tensor& q, const Tensor& k, int window,
                                             int heads) {
  const WindowGrid g = make_grid(q, k, window, heads);
  std::vector<Tensor> out;
  for (index_t win = 0; win < g.windows(); ++win) {
    const auto tok = g.tokens(win);
    const auto n = static_cast<index_t>(tok.size());
    for (index_t h = 0; h < g.heads; ++h) {
      Tensor p({n, n});
      window_probs(g, tok, h, q.data(), k.data(), p.data());
      out.push_back(std::move(p));
    }
  }
  return out;
}

Var window_attention(Var q, Var k, Var v, int window, int heads) {
  Tape& tape = tape_of(q);
  const WindowGrid g = make_grid(q.value(), k.value(), window, heads);
  if (v.shape() != q.shape()) throw ShapeError("window_attention: v shape differs from q");
  const double* pq = q.value().data();
  const double* pk = k.value().data();
  const double* pv = v.value().data();
  Tensor y(q.shape());
  double* py = y.data();
  double flops = 0.0;
  for (index_t win = 0; win < g.windows(); ++win) {
    const auto n = static_cast<double>(g.tokens(win).size());
    flops += 4.0 * n * n * static_cast<double>(g.C);
  }
  if (g_tally) g_tally->attention += flops;

#pragma omp parallel
  {
    std::vector<double> p;
#pragma omp for schedule(static)
    for (index_t win = 0; win < g.windows(); ++win) {
      const auto tok = g.tokens(win);
      const auto n = static_cast<index_t>(tok.size());
      p.resize(static_cast<std::size_t>(n * n));
      for (index_t h = 0; h < g.heads; ++h) {
        window_probs(g, tok, h, pq, pk, p.data());
        for (index_t i = 0; i < n; ++i) {
          double* out = py + tok[i] * g.C + h * g.dh;
          for (index_t j = 0; j < n; ++j) {
            const double w = p[i * n + j];
            const double* vj = pv + tok[j] * g.C + h * g.dh;
            for (index_t e = 0; e < g.dh; ++e) out[e] += w * vj[e];
          }
        }
      }
    }
  }

  return tape.record(std::move(y), {q, k, v}, [q, k, v, g](Tape& t, const Tensor& gout) {
    const double* pq = q.value().data();
    const double* pk = k.value().data();
    const double* pv = v.value().data();
    const double* pg = gout.data();
    double* gq = t.requires_grad(q) ? t.grad_slot(q).data() : nullptr;
    double* gk = t.requires_grad(k) ? t.grad_slot(k).data() : nullptr;
    double* gv = t.requires_grad(v) ? t.grad_slot(v).data() : nullptr;
    const double scale = 1.0 / std::sqrt(static_cast<double>(g.dh));
#pragma omp parallel
    {
      std::vector<double> p, gp;
#pragma omp for schedule(static)
      for (index_t win = 0; win < g.windows(); ++win) {
        const auto tok = g.tokens(win);
        const auto n = static_cast<index_t>(tok.size());
        p.resize(static_cast<std::size_t>(n * n));
        gp.resize(p.size());
        for (index_t h = 0; h < g.heads; ++h) {
          window_probs(g, tok, h, pq, pk, p.data());
          // gP = gO V^T ; gV = P^T gO
          for (index_t i = 0; i < n; ++i) {
            const double* go = pg + tok[i] * g.C + h * g.dh;
            for (index_t j = 0; j < n; ++j) {
              const double* vj = pv + tok[j] * g.C + h * g.dh;
              double s = 0.0;
              for (index_t e = 0; e < g.dh; ++e) s += go[e] * vj[e];
              gp[i * n + j] = s;
              if (gv) {
                double* dst = gv + tok[j] * g.C + h * g.dh;
                const double w = p[i * n + j];
                for (index_t e = 0; e < g.dh; ++e) dst[e] += w * go[e];
              }
            }
          }
          // gS = P (gP - rowsum(gP P))
          for (index_t i = 0; i < n; ++i) {
            double r = 0.0;
            for (index_t j = 0; j < n; ++j) r += gp[i * n + j] * p[i * n + j];
            for (index_t j = 0; j < n; ++j) gp[i * n + j] = p[i * n + j] * (gp[i * n + j] - r);
          }
          for (index_t i = 0; i < n; ++i) {
            const double* qi = pq + tok[i] * g.C + h * g.dh;
            for (index_t j = 0; j < n; ++j) {
              const double s = gp[i * n + j] * scale;
              const double* kj = pk + tok[j] * g.C + h * g.dh;
              if (gq) {
                double* dst = gq + tok[i] * g.C + h * g.dh;
                for (index_t e = 0; e < g.dh; ++e) dst[e] += s * kj[e];
              }
              if (gk) {
                double* dst = gk + tok[j] * g.C + h * g.dh;
                for (index_t e = 0; e < g.dh; ++e) dst[e] += s * qi[e];
              }
            }
          }
        }
      }
    }
  });
}

}  // namespace mtk::ops
