#pragma once

#include "mtk/params.hpp"

// Selective state-space (S6) layer and its cross variant, where one sequence
// supplies the input-dependent B, C, delta and another drives the recurrence.
namespace mtk::ssm {

// Learned state of one S6 instance. Shapes: a_log [C,N], d_skip [C],
// w_b/w_c [C,N], w_dt [C,R], w_dt_up [R,C], dt_bias [C].
struct SsmParams {
  Tensor a_log, d_skip, w_b, w_c, w_dt, w_dt_up, dt_bias;

  std::int64_t channels() const { return a_log.dim(0); }
  std::int64_t state() const { return a_log.dim(1); }
  std::int64_t rank() const { return w_dt.dim(1); }

  // a_log[c,n] = ln(n+1); dt_bias chosen so softplus(dt_bias) ~ U[1e-3, 1e-1].
  static SsmParams init(std::int64_t channels, std::int64_t state, Rng& rng);
  static std::int64_t default_rank(std::int64_t channels);
};

// Field names in declaration order, as used for store prefixes.
inline constexpr const char* kFields[] = {"a_log", "d_skip", "w_b", "w_c",
                                          "w_dt", "w_dt_up", "dt_bias"};

void register_params(ParamStore& store, const std::string& prefix, const SsmParams& p);

struct SsmVars {
  Var a_log, d_skip, w_b, w_c, w_dt, w_dt_up, dt_bias;
};
SsmVars bind(Context& ctx, const std::string& prefix);
SsmVars bind(Tape& tape, const SsmParams& p, bool requires_grad);

struct Projection {
  Var b_seq, c_seq, delta;
};
// src [B,L,C] -> B_seq, C_seq [B,L,N] (channel-mean of per-channel
// projections) and delta [B,L,C] = softplus(src w_dt w_dt_up + dt_bias).
Projection project(const SsmVars& p, Var src);

// Differentiable recurrence on explicit coefficients. x, delta [B,L,C];
// a [C,N] (negative); b, c [B,L,N]; d [C]. chunk > 0 selects the chunked
// kernel (same result up to rounding).
Var scan(Var x, Var delta, Var a, Var b, Var c, Var d, std::int64_t chunk = 0);

// S6 driven by x with parameters generated from src; src == x is plain S6.
Var forward(const SsmVars& p, Var x, Var src, std::int64_t chunk = 0);

// ---- Tensor-level entry points. Sequences are [L,C] or [B,L,C]. ----

struct Discretized {
  Tensor abar, bbar;  // [L,C,N]
};
// Abar = exp(delta*A), A = -exp(a_log); Bbar = delta * B_seq.
// delta [L,C], b_seq [L,N]. Throws DomainError on nonpositive delta.
Discretized discretize(const Tensor& a_log, const Tensor& delta, const Tensor& b_seq);

struct ProjectionValues {
  Tensor b_seq, c_seq, delta;
};
ProjectionValues s6_project(const SsmParams& p, const Tensor& src);

Tensor selective_scan_seq(const SsmParams& p, const Tensor& x, const Tensor& src);
Tensor selective_scan_chunked(const SsmParams& p, const Tensor& x, const Tensor& src,
                              std::int64_t chunk);
Tensor cross_scan(const SsmParams& p, const Tensor& query, const Tensor& shared);

}  // namespace mtk::ssm
