#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "mtk/tensor.hpp"

namespace mtk {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// tape that produced it is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::int64_t dim(int axis) const { return value().dim(axis); }
  int id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Append-only record of differentiable operations. Node order is a
// topological order; backward() walks it in reverse exactly once.
class Tape {
 public:
  // Receives the gradient of the node's output; accumulates into inputs.
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  // Records an op output. `fn` is dropped when no input requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  const Tensor& value(const Var& v) const { return nodes_[v.id()].value; }
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

  // Zero-initialised gradient buffer of v, for kernels that accumulate in place.
  Tensor& grad_slot(const Var& v);
  // grad(v) += g. No-op when v does not require a gradient.
  void accumulate(const Var& v, const Tensor& g);

  void backward(const Var& loss);
  // Gradient of the last backward() target with respect to v; zeros when v was
  // not reached.
  Tensor grad(const Var& v) const;
  bool has_grad(const Var& v) const { return nodes_[v.id()].has_grad; }

  std::size_t size() const noexcept { return nodes_.size(); }

  // Throw NumericError when an op produces NaN/Inf. On by default in debug builds.
  void set_check_finite(bool on) noexcept { check_finite_ = on; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn fn);

  std::deque<Node> nodes_;  // deque: values stay put while ops push nodes
  bool backward_done_ = false;
#ifdef NDEBUG
  bool check_finite_ = false;
#else
  bool check_finite_ = true;
#endif
};

}  // namespace mtk
