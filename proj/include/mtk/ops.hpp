#pragma once

#include <optional>
#include <vector>

#include "mtk/tape.hpp"

// Differentiable ops on channel-last tensors. Every op records its backward
// rule on the tape that owns its inputs.
namespace mtk::ops {

enum class ElementwiseKind { add, mul, silu, sigmoid, relu, softplus, exp, neg };

// Binary kinds broadcast over axes where one operand has extent 1 (equal rank
// required). Throws ShapeError otherwise.
Var elementwise(ElementwiseKind kind, Var a, std::optional<Var> b = std::nullopt);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var silu(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var softplus(Var a);
Var exp(Var a);
Var neg(Var a);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

// y[..., j] = sum_i x[..., i] * w[i, j] (+ bias[j])
Var linear(Var x, Var w, std::optional<Var> bias = std::nullopt);

enum class ConvKind { k1x1, k3x3, k3x3_depthwise };
// x [B,H,W,Cin]. Weights: 1x1 [Cin,Cout]; 3x3 [3,3,Cin,Cout]; depthwise [3,3,C].
// 3x3 variants zero-pad by one pixel.
Var conv2d(Var x, ConvKind kind, Var w, std::optional<Var> bias = std::nullopt);

Var layernorm(Var x, Var gamma, Var beta, double eps = 1e-5);
// Training mode normalises with batch statistics over (B,H,W) and updates the
// running buffers in place; eval mode uses the running buffers.
Var batchnorm2d(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
                bool training, double eps = 1e-5, double momentum = 0.1);

// Half-pixel (align_corners=false) bilinear upsampling by an integer factor.
Var interpolate_bilinear(Var x, int scale);

// [B,H,W,C*r*r] -> [B,rH,rW,C]: channel group (i*r + j) lands at spatial offset
// (i, j) of each r x r block. rearrange_reduce is its exact inverse.
Var rearrange_expand(Var x, int r);
Var rearrange_reduce(Var x, int r);

Var concat_channels(const std::vector<Var>& xs);
Var reshape(Var x, Shape shape);
// x [B,P,C] -> y [B,K,C] with y[b,k,:] = x[b,index[k],:].
Var gather_rows(Var x, const std::vector<std::int64_t>& index);

Var sum(Var x);
Var mean(Var x);
// sum(x * w) for a fixed weight tensor.
Var dot(Var x, const Tensor& w);

// Multi-head softmax attention inside non-overlapping window x window tiles of
// [B,H,W,C] maps. Edge tiles are truncated (equivalent to masked padding).
// q comes from one map, k and v from another for cross-attention.
Var window_attention(Var q, Var k, Var v, int window, int heads);
// Attention probabilities of every (batch, tile, head), each [n, n].
std::vector<Tensor> window_attention_weights(const Tensor& q, const Tensor& k, int window,
                                             int heads);

// Optional FLOP accounting. While a FlopScope is alive on the current thread,
// linear/conv/scan/attention ops add their analytic counts to the tally.
struct FlopTally {
  double linear = 0, conv = 0, scan = 0, attention = 0;
  double total() const { return linear + conv + scan + attention; }
};
class FlopScope {
 public:
  explicit FlopScope(FlopTally& tally);
  ~FlopScope();
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;

 private:
  FlopTally* previous_;
};
FlopTally* active_flop_tally();

}  // namespace mtk::ops
