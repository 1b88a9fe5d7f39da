#pragma once

#include <string>
#include <vector>

// Equivalence checks of the fast kernels against plain loop nests that
// materialise every intermediate (hidden states, patches, score matrices).
namespace mtk::oracle {

struct Result {
  std::string name;
  double max_err = 0;
  double tol = 0;  // 0 means bit-identical required
  int cases = 0;
  bool pass() const { return tol == 0 ? max_err == 0 : max_err < tol; }
};

std::vector<Result> run_all(std::uint64_t seed);

}  // namespace mtk::oracle
