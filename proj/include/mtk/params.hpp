#pragma once

#include <deque>
#include <map>
#include <string>
#include <vector>

#include "mtk/rng.hpp"
#include "mtk/tape.hpp"

namespace mtk {

// Ordered collection of named tensors: trainable parameters plus
// non-trainable buffers (batchnorm running statistics).
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool trainable = true;
  };

  Tensor& add(const std::string& name, Tensor value, bool trainable = true);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  Entry& entry(const std::string& name);

  std::deque<Entry>& entries() { return entries_; }
  const std::deque<Entry>& entries() const { return entries_; }

  // Number of trainable scalars.
  std::int64_t count() const;
  // Overwrite every trainable tensor with U(-scale, scale) draws, in order.
  void randomize(Rng& rng, double scale);

 private:
  std::deque<Entry> entries_;  // deque keeps references stable
  std::map<std::string, std::size_t> index_;
};

// Binds parameters of a store to one tape for a single forward pass.
class Context {
 public:
  Context(Tape& tape, ParamStore& store, bool training)
      : tape_(tape), store_(store), training_(training) {}

  Tape& tape() { return tape_; }
  ParamStore& store() { return store_; }
  bool training() const { return training_; }

  // Leaf for a parameter, created on first use. Frozen names become constants.
  Var param(const std::string& name);
  Tensor& buffer(const std::string& name) { return store_.get(name); }
  // Parameters bound so far, in binding order.
  const std::vector<std::pair<std::string, Var>>& bound() const { return order_; }
  // Treat these parameters as constants (no gradient).
  void freeze(const std::string& name) { frozen_[name] = true; }

 private:
  Tape& tape_;
  ParamStore& store_;
  bool training_;
  std::map<std::string, Var> vars_;
  std::map<std::string, bool> frozen_;
  std::vector<std::pair<std::string, Var>> order_;
};

namespace init {

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor fan_in_uniform(Shape shape, std::int64_t fan_in, Rng& rng);
Tensor uniform(Shape shape, double lo, double hi, Rng& rng);

}  // namespace init

}  // namespace mtk
