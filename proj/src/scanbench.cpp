#include "mtk/scanbench.hpp"

#include <chrono>
#include <cmath>
#include <ostream>

#include "mtk/error.hpp"
#include "mtk/kernels.hpp"
#include "mtk/parallel.hpp"
#include "mtk/rng.hpp"

namespace mtk::scanbench {

namespace {

std::vector<float> random(std::int64_t n, Rng& rng, double lo, double hi) {
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

template <class F>
Row time(const std::string& impl, std::int64_t L, int repeats, F&& f) {
  f();  // warm-up
  std::vector<double> ns;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    ns.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
  }
  double mean = 0;
  for (double v : ns) mean += v;
  mean /= static_cast<double>(ns.size());
  double var = 0;
  for (double v : ns) var += (v - mean) * (v - mean);
  const double sd = ns.size() > 1 ? std::sqrt(var / static_cast<double>(ns.size() - 1)) : 0.0;
  return {impl, L, mean, sd};
}

}  // namespace

std::vector<Row> run(const Options& opt) {
  if (opt.repeats < 1) throw Error("usage", "repeats must be >= 1");
  for (std::size_t i = 1; i < opt.lengths.size(); ++i) {
    if (opt.lengths[i] <= opt.lengths[i - 1]) throw Error("usage", "lengths must be ascending");
  }
  for (const auto& impl : opt.impls) {
    if (impl != "seq" && impl != "chunked" && impl != "attention") {
      throw Error("usage", "unknown impl '" + impl + "'");
    }
  }
  const int saved = parallel::max_threads();
  if (!opt.parallel) parallel::set_max_threads(1);

  Rng rng(opt.seed);
  const auto C = opt.channels, N = opt.state;
  std::vector<Row> rows;
  for (const auto& impl : opt.impls) {
    for (auto L : opt.lengths) {
      if (impl == "attention") {
        const auto q = random(L * C, rng, -1, 1), k = random(L * C, rng, -1, 1),
                   v = random(L * C, rng, -1, 1);
        std::vector<float> out(q.size());
        rows.push_back(time(impl, L, opt.repeats, [&] {
          kernels::attention<float>(L, C, q.data(), k.data(), v.data(), out.data());
        }));
        continue;
      }
      const auto x = random(L * C, rng, -1, 1), delta = random(L * C, rng, 1e-3, 0.1),
                 a = random(C * N, rng, -2, -0.5), b = random(L * N, rng, -1, 1),
                 c = random(L * N, rng, -1, 1), d = random(C, rng, -1, 1);
      kernels::ScanProblem<float> p{1, L, C, N, x.data(), delta.data(), a.data(),
                                    b.data(), c.data(), d.data()};
      std::vector<float> y(x.size());
      if (impl == "seq") {
        rows.push_back(time(impl, L, opt.repeats, [&] { kernels::selective_scan(p, y.data()); }));
      } else {
        rows.push_back(time(impl, L, opt.repeats,
                            [&] { kernels::selective_scan_chunked(p, opt.chunk, y.data()); }));
      }
    }
  }
  parallel::set_max_threads(saved);
  return rows;
}

void write_csv(std::ostream& out, const std::vector<Row>& rows) {
  out << "impl,L,mean_ns,stddev\n";
  for (const auto& r : rows) {
    out << r.impl << ',' << r.length << ',' << r.mean_ns << ',' << r.stddev << '\n';
  }
}

double loglog_slope(const std::vector<Row>& rows, const std::string& impl) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
  for (const auto& r : rows) {
    if (r.impl != impl) continue;
    const double x = std::log(static_cast<double>(r.length)), y = std::log(r.mean_ns);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    n += 1;
  }
  if (n < 2) return NAN;
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace mtk::scanbench
