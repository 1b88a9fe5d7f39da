#include "mtk/ssm.hpp"

#include <cmath>

#include "mtk/error.hpp"
#include "mtk/kernels.hpp"
#include "mtk/ops.hpp"

namespace mtk::ssm {

std::int64_t SsmParams::default_rank(std::int64_t channels) {
  return std::max<std::int64_t>(1, channels / 16);
}

SsmParams SsmParams::init(std::int64_t channels, std::int64_t state, Rng& rng) {
  const std::int64_t R = default_rank(channels);
  SsmParams p;
  p.a_log = Tensor({channels, state});
  for (std::int64_t c = 0; c < channels; ++c)
    for (std::int64_t n = 0; n < state; ++n) p.a_log.at({c, n}) = std::log(static_cast<double>(n + 1));
  p.d_skip = Tensor({channels}, 1.0);
  // Unit-variance projections; the channel mean then scales B, C like 1/sqrt(C).
  p.w_b = init::uniform({channels, state}, -std::sqrt(3.0), std::sqrt(3.0), rng);
  p.w_c = init::uniform({channels, state}, -std::sqrt(3.0), std::sqrt(3.0), rng);
  p.w_dt = init::fan_in_uniform({channels, R}, channels, rng);
  p.w_dt_up = init::fan_in_uniform({R, channels}, R, rng);
  p.dt_bias = Tensor({channels});
  for (double& b : p.dt_bias.values()) {
    const double dt = rng.uniform(1e-3, 1e-1);
    b = dt + std::log(-std::expm1(-dt));  // softplus^-1
  }
  return p;
}

namespace {

const Tensor* field(const SsmParams& p, int i) {
  const Tensor* fields[] = {&p.a_log, &p.d_skip, &p.w_b, &p.w_c, &p.w_dt, &p.w_dt_up, &p.dt_bias};
  return fields[i];
}

Var* field(SsmVars& v, int i) {
  Var* fields[] = {&v.a_log, &v.d_skip, &v.w_b, &v.w_c, &v.w_dt, &v.w_dt_up, &v.dt_bias};
  return fields[i];
}

}  // namespace

void register_params(ParamStore& store, const std::string& prefix, const SsmParams& p) {
  for (int i = 0; i < 7; ++i) store.add(prefix + "." + kFields[i], *field(p, i));
}

SsmVars bind(Context& ctx, const std::string& prefix) {
  SsmVars v;
  for (int i = 0; i < 7; ++i) *field(v, i) = ctx.param(prefix + "." + kFields[i]);
  return v;
}

SsmVars bind(Tape& tape, const SsmParams& p, bool requires_grad) {
  SsmVars v;
  for (int i = 0; i < 7; ++i) *field(v, i) = tape.leaf(*field(p, i), requires_grad);
  return v;
}

Projection project(const SsmVars& p, Var src) {
  const auto C = p.w_b.dim(0);
  if (src.value().ndim() != 3 || src.dim(2) != C) {
    throw ShapeError("ssm parameter source " + to_string(src.shape()) + " for " +
                     std::to_string(C) + " channels");
  }
  Projection out;
  out.b_seq = ops::scale(ops::linear(src, p.w_b), 1.0 / static_cast<double>(C));
  out.c_seq = ops::scale(ops::linear(src, p.w_c), 1.0 / static_cast<double>(C));
  out.delta = ops::softplus(ops::linear(ops::linear(src, p.w_dt), p.w_dt_up, p.dt_bias));
  return out;
}

Var scan(Var x, Var delta, Var a, Var b, Var c, Var d, std::int64_t chunk) {
  const Tensor& vx = x.value();
  if (vx.ndim() != 3) throw ShapeError("scan input must be [B,L,C], got " + to_string(vx.shape()));
  const auto B = vx.dim(0), L = vx.dim(1), C = vx.dim(2);
  const auto N = a.value().ndim() == 2 ? a.dim(1) : 0;
  if (L < 1) throw DomainError("scan over an empty sequence");
  if (delta.shape() != vx.shape() || a.shape() != Shape{C, N} || b.shape() != Shape{B, L, N} ||
      c.shape() != Shape{B, L, N} || d.shape() != Shape{C}) {
    throw ShapeError("scan operands disagree: x " + to_string(vx.shape()) + ", a " +
                     to_string(a.shape()) + ", b " + to_string(b.shape()));
  }
  kernels::ScanProblem<double> p{B,
                                 L,
                                 C,
                                 N,
                                 vx.data(),
                                 delta.value().data(),
                                 a.value().data(),
                                 b.value().data(),
                                 c.value().data(),
                                 d.value().data()};
  Tensor y(vx.shape());
  if (chunk > 0) {
    kernels::selective_scan_chunked(p, chunk, y.data());
  } else {
    kernels::selective_scan(p, y.data());
  }
  if (auto* tally = ops::active_flop_tally()) {
    tally->scan += 8.0 * static_cast<double>(B * L * C * N);
  }
  return x.tape()->record(std::move(y), {x, delta, a, b, c, d},
                          [x, delta, a, b, c, d, B, L, C, N](Tape& t, const Tensor& g) {
                            kernels::ScanProblem<double> p{B,
                                                           L,
                                                           C,
                                                           N,
                                                           x.value().data(),
                                                           delta.value().data(),
                                                           a.value().data(),
                                                           b.value().data(),
                                                           c.value().data(),
                                                           d.value().data()};
                            auto slot = [&t](const Var& v) {
                              return t.requires_grad(v) ? t.grad_slot(v).data() : nullptr;
                            };
                            kernels::ScanGrads gr{slot(x), slot(delta), slot(a),
                                                  slot(b), slot(c),     slot(d)};
                            kernels::selective_scan_backward(p, g.data(), gr);
                          });
}

Var forward(const SsmVars& p, Var x, Var src, std::int64_t chunk) {
  if (x.shape() != src.shape()) {
    throw ShapeError("query " + to_string(x.shape()) + " vs parameter source " +
                     to_string(src.shape()));
  }
  const Projection pr = project(p, src);
  const Var a = ops::neg(ops::exp(p.a_log));
  return scan(x, pr.delta, a, pr.b_seq, pr.c_seq, p.d_skip, chunk);
}

namespace {

Tensor as_batched(const Tensor& t) {
  if (t.ndim() == 2) return t.reshape({1, t.dim(0), t.dim(1)});
  if (t.ndim() == 3) return t;
  throw ShapeError("sequence must be [L,C] or [B,L,C], got " + to_string(t.shape()));
}

Tensor run(const SsmParams& params, const Tensor& x, const Tensor& src, std::int64_t chunk) {
  if (x.shape() != src.shape()) {
    throw ShapeError("query " + to_string(x.shape()) + " vs parameter source " +
                     to_string(src.shape()));
  }
  Tape tape;
  const SsmVars v = bind(tape, params, false);
  Var y = forward(v, tape.constant(as_batched(x)), tape.constant(as_batched(src)), chunk);
  return y.value().reshape(x.shape());
}

}  // namespace

Discretized discretize(const Tensor& a_log, const Tensor& delta, const Tensor& b_seq) {
  if (a_log.ndim() != 2 || delta.ndim() != 2 || b_seq.ndim() != 2 ||
      delta.dim(1) != a_log.dim(0) || b_seq.dim(1) != a_log.dim(1) ||
      b_seq.dim(0) != delta.dim(0)) {
    throw ShapeError("discretize: a_log " + to_string(a_log.shape()) + ", delta " +
                     to_string(delta.shape()) + ", b_seq " + to_string(b_seq.shape()));
  }
  const auto L = delta.dim(0), C = delta.dim(1), N = a_log.dim(1);
  for (double v : delta.values()) {
    if (!(v > 0.0)) throw DomainError("discretize: delta must be positive");
  }
  Discretized out{Tensor({L, C, N}), Tensor({L, C, N})};
  for (std::int64_t t = 0; t < L; ++t)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t n = 0; n < N; ++n) {
        const double dt = delta[t * C + c];
        const double A = -std::exp(a_log[c * N + n]);
        out.abar[(t * C + c) * N + n] = std::exp(dt * A);
        out.bbar[(t * C + c) * N + n] = dt * b_seq[t * N + n];
      }
  return out;
}

ProjectionValues s6_project(const SsmParams& params, const Tensor& src) {
  Tape tape;
  const SsmVars v = bind(tape, params, false);
  const Projection pr = project(v, tape.constant(as_batched(src)));
  if (src.ndim() == 2) {
    const auto L = src.dim(0), N = params.state();
    return {pr.b_seq.value().reshape({L, N}), pr.c_seq.value().reshape({L, N}),
            pr.delta.value().reshape(src.shape())};
  }
  return {pr.b_seq.value(), pr.c_seq.value(), pr.delta.value()};
}

Tensor selective_scan_seq(const SsmParams& p, const Tensor& x, const Tensor& src) {
  return run(p, x, src, 0);
}

Tensor selective_scan_chunked(const SsmParams& p, const Tensor& x, const Tensor& src,
                              std::int64_t chunk) {
  if (chunk < 1) throw DomainError("chunk size must be >= 1");
  return run(p, x, src, chunk);
}

Tensor cross_scan(const SsmParams& p, const Tensor& query, const Tensor& shared) {
  return run(p, query, shared, 0);
}

}  // namespace mtk::ssm
