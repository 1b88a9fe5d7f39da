#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

// Sequence-length scaling of the f32 scan kernels against full softmax
// attention.
namespace mtk::scanbench {

struct Options {
  std::vector<std::string> impls{"seq", "chunked", "attention"};
  std::vector<std::int64_t> lengths{256, 512, 1024, 2048, 4096, 8192};
  int repeats = 5;
  std::int64_t channels = 16;  // inner channels; attention head dim
  std::int64_t state = 16;
  std::int64_t chunk = 64;
  bool parallel = false;  // default pins the timed loops to one worker
  std::uint64_t seed = 0;
};

struct Row {
  std::string impl;
  std::int64_t length = 0;
  double mean_ns = 0;
  double stddev = 0;  // sample stddev over repeats, 0 for a single repeat
};

std::vector<Row> run(const Options& opt);
void write_csv(std::ostream& out, const std::vector<Row>& rows);
// Least-squares slope of log(mean_ns) against log(L) for one impl.
double loglog_slope(const std::vector<Row>& rows, const std::string& impl);

}  // namespace mtk::scanbench
