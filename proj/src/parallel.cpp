#include "mtk/parallel.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

namespace mtk::parallel {

int max_threads() { return omp_get_max_threads(); }

void set_max_threads(int n) { omp_set_num_threads(n < 1 ? 1 : n); }

void configure_from_env() {
  if (const char* env = std::getenv("MTK_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) set_max_threads(n);
    } catch (const std::exception&) {
    }
  }
}

}  // namespace mtk::parallel
