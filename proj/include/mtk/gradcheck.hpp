#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mtk/params.hpp"

// Central finite-difference checks of tape gradients.
namespace mtk::gradcheck {

struct Options {
  double eps = 1e-5;
  double tol = 1e-4;
  // Entries checked per tensor; 0 checks every entry, otherwise a seeded sample.
  int max_entries = 0;
  std::uint64_t seed = 0;
  // Negative control: perturbs the first analytic gradient before comparing.
  bool corrupt = false;
};

struct Entry {
  std::string name;
  double max_rel_err = 0;  // max |g_a - g_fd| / max(1, |g_fd|)
  double max_abs_grad = 0;
  std::int64_t checked = 0;
};

struct Report {
  std::string suite;
  std::vector<Entry> entries;
  double max_rel_err() const;
  bool pass(double tol) const { return max_rel_err() < tol; }
};

using LossFn = std::function<Var(Context&)>;

// Compares gradients of `loss` for every trainable tensor of the store.
// The loss is re-evaluated in training mode for each perturbation.
Report check(const std::string& suite, ParamStore& store, const LossFn& loss, const Options& opt);

// Scalar probe of a set of outputs: sum_i <y_i, R_i> with fixed random R_i.
class Probe {
 public:
  explicit Probe(std::uint64_t seed) : rng_(seed) {}
  Var operator()(const std::vector<Var>& outputs);

 private:
  Rng rng_;
  std::vector<Tensor> weights_;
};

// Built-in suites: "kernels" (ops, S6, cross 2D scan), "blocks" (decoder
// blocks, heads, encoder) and "model" (full three-stage model, C=8, T=2).
std::vector<Report> run_scope(const std::string& scope, const Options& opt);
std::vector<std::string> scopes();

}  // namespace mtk::gradcheck
