#include "mtk/scan2d.hpp"

#include <algorithm>

#include "mtk/error.hpp"
#include "mtk/ops.hpp"

namespace mtk::scan2d {

const char* name(Direction d) {
  switch (d) {
    case Direction::D1: return "D1";
    case Direction::D2: return "D2";
    case Direction::D3: return "D3";
    case Direction::D4: return "D4";
  }
  return "?";
}

std::vector<std::int64_t> permutation(std::int64_t H, std::int64_t W, Direction d) {
  const std::int64_t P = H * W;
  std::vector<std::int64_t> order(static_cast<std::size_t>(P));
  for (std::int64_t k = 0; k < P; ++k) {
    const bool reversed = d == Direction::D3 || d == Direction::D4;
    const std::int64_t j = reversed ? P - 1 - k : k;
    if (d == Direction::D1 || d == Direction::D3) {
      order[k] = j;
    } else {
      const std::int64_t r = j % H, c = j / H;
      order[k] = r * W + c;
    }
  }
  return order;
}

std::vector<std::int64_t> inverse_permutation(std::int64_t H, std::int64_t W, Direction d) {
  const auto order = permutation(H, W, d);
  std::vector<std::int64_t> inv(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) inv[order[k]] = static_cast<std::int64_t>(k);
  return inv;
}

Var unfold(Var x, Direction d) {
  if (x.value().ndim() != 4) throw ShapeError("unfold needs [B,H,W,C], got " + to_string(x.shape()));
  const auto B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  return ops::gather_rows(ops::reshape(x, {B, H * W, C}), permutation(H, W, d));
}

Var fold(Var seq, std::int64_t H, std::int64_t W, Direction d) {
  if (seq.value().ndim() != 3 || seq.dim(1) != H * W) {
    throw ShapeError("fold of " + to_string(seq.shape()) + " to " + std::to_string(H) + "x" +
                     std::to_string(W));
  }
  const auto B = seq.dim(0), C = seq.dim(2);
  return ops::reshape(ops::gather_rows(seq, inverse_permutation(H, W, d)), {B, H, W, C});
}

Tensor unfold(const Tensor& x, Direction d) {
  Tape tape;
  return unfold(tape.constant(x), d).value();
}

Tensor fold(const Tensor& seq, std::int64_t H, std::int64_t W, Direction d) {
  Tape tape;
  return fold(tape.constant(seq), H, W, d).value();
}

Ss2dParams Ss2dParams::init(std::int64_t channels, std::int64_t state, Rng& rng) {
  Ss2dParams p;
  for (auto& d : p.dir) d = ssm::SsmParams::init(channels, state, rng);
  return p;
}

Var cross_forward(const DirectionVars& p, Var query, Var shared,
                  const std::vector<Direction>& active) {
  if (active.empty()) throw DomainError("2D scan needs at least one active direction");
  if (query.shape() != shared.shape() || query.value().ndim() != 4) {
    throw ShapeError("2D scan query " + to_string(query.shape()) + " vs shared " +
                     to_string(shared.shape()));
  }
  const auto H = query.dim(1), W = query.dim(2);
  const bool self = query.id() == shared.id();
  // Fixed D1..D4 summation order regardless of how `active` is listed.
  Var total;
  for (Direction d : kAllDirections) {
    if (std::find(active.begin(), active.end(), d) == active.end()) continue;
    const auto i = static_cast<std::size_t>(d);
    Var q = unfold(query, d);
    Var s = self ? q : unfold(shared, d);
    Var y = fold(ssm::forward(p[i], q, s), H, W, d);
    total = total.valid() ? ops::add(total, y) : y;
  }
  return total;
}

namespace {

Tensor run(const Ss2dParams& params, const Tensor& query, const Tensor* shared,
           const std::vector<Direction>& active) {
  Tape tape;
  DirectionVars v;
  for (std::size_t i = 0; i < 4; ++i) v[i] = ssm::bind(tape, params.dir[i], false);
  Var q = tape.constant(query);
  Var s = shared ? tape.constant(*shared) : q;
  return cross_forward(v, q, s, active).value();
}

}  // namespace

Tensor ss2d(const Ss2dParams& p, const Tensor& x, const std::vector<Direction>& active) {
  return run(p, x, nullptr, active);
}

Tensor css2d(const Ss2dParams& p, const Tensor& query, const Tensor& shared,
             const std::vector<Direction>& active) {
  return run(p, query, &shared, active);
}

}  // namespace mtk::scan2d
