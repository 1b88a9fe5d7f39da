#pragma once

namespace mtk::parallel {

// Worker cap for OpenMP regions. Initialised from MTK_THREADS when set,
// otherwise the OpenMP default.
int max_threads();
void set_max_threads(int n);
void configure_from_env();

}  // namespace mtk::parallel
