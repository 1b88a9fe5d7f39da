#include "mtk/params.hpp"

#include <cmath>

#include "mtk/error.hpp"

namespace mtk {

Tensor& ParamStore::add(const std::string& name, Tensor value, bool trainable) {
  if (contains(name)) throw Error("usage", "duplicate parameter name " + name);
  index_[name] = entries_.size();
  entries_.push_back({name, std::move(value), trainable});
  return entries_.back().value;
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("usage", "unknown parameter " + name);
  return entries_[it->second];
}

Tensor& ParamStore::get(const std::string& name) { return entry(name).value; }

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("usage", "unknown parameter " + name);
  return entries_[it->second].value;
}

std::int64_t ParamStore::count() const {
  std::int64_t n = 0;
  for (const auto& e : entries_)
    if (e.trainable) n += e.value.numel();
  return n;
}

void ParamStore::randomize(Rng& rng, double scale) {
  for (auto& e : entries_) {
    if (!e.trainable) continue;
    for (double& v : e.value.values()) v = rng.uniform(-scale, scale);
  }
}

Var Context::param(const std::string& name) {
  auto it = vars_.find(name);
  if (it != vars_.end()) return it->second;
  ParamStore::Entry& e = store_.entry(name);
  const bool grad = e.trainable && !frozen_.count(name);
  Var v = tape_.leaf(e.value, grad);
  vars_.emplace(name, v);
  order_.emplace_back(name, v);
  return v;
}

namespace init {

Tensor uniform(Shape shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

Tensor fan_in_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return uniform(std::move(shape), -bound, bound, rng);
}

}  // namespace init

}  // namespace mtk
