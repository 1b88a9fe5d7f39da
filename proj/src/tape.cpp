#include "mtk/tape.hpp"

#include "mtk/error.hpp"

namespace mtk {

const Tensor& Var::value() const {
  if (!tape_) throw Error("usage", "value() on an unbound Var");
  return tape_->value(*this);
}

Var Tape::push(Tensor value, bool requires_grad, BackwardFn fn) {
  if (backward_done_) throw Error("usage", "tape already consumed by backward()");
  if (check_finite_ && !value.all_finite()) {
    throw NumericError("non-finite value produced at tape node " + std::to_string(nodes_.size()));
  }
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (const auto& v : inputs) {
    if (v.tape() != this) throw Error("usage", "op input recorded on a different tape");
    needs = needs || nodes_[v.id()].requires_grad;
  }
  return push(std::move(value), needs, std::move(fn));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  bool needs = false;
  for (const auto& v : inputs) {
    if (v.tape() != this) throw Error("usage", "op input recorded on a different tape");
    needs = needs || nodes_[v.id()].requires_grad;
  }
  return push(std::move(value), needs, std::move(fn));
}

Tensor& Tape::grad_slot(const Var& v) {
  Node& n = nodes_[v.id()];
  if (!n.has_grad) {
    n.grad = Tensor::zeros_like(n.value);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(const Var& v, const Tensor& g) {
  if (!nodes_[v.id()].requires_grad) return;
  Tensor& slot = grad_slot(v);
  if (slot.shape() != g.shape()) {
    throw ShapeError("gradient shape " + to_string(g.shape()) + " for value " +
                     to_string(slot.shape()));
  }
  double* dst = slot.data();
  const double* src = g.data();
  for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw Error("usage", "loss recorded on a different tape");
  if (loss.value().numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + to_string(loss.shape()));
  }
  if (backward_done_) throw Error("usage", "backward() called twice on one tape");
  backward_done_ = true;
  grad_slot(loss)[0] = 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.requires_grad || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  return n.has_grad ? n.grad : Tensor::zeros_like(n.value);
}

}  // namespace mtk
