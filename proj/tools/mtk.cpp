#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtk/checkpoint.hpp"
#include "mtk/error.hpp"
#include "mtk/gradcheck.hpp"
#include "mtk/harness.hpp"
#include "mtk/oracle.hpp"
#include "mtk/parallel.hpp"
#include "mtk/scanbench.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mtk;

namespace {

// Exit codes: 0 ok, 1 verification or runtime failure, 2 usage.
constexpr int kFail = 1;
constexpr int kUsage = 2;

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("io", "cannot write " + path.string());
  out << text;
}

RunConfig load_config(const std::string& path) {
  return path.empty() ? RunConfig{} : run_config_from_json(read_json(path));
}

int cmd_gradcheck(const std::string& scope, const gradcheck::Options& opt) {
  bool ok = true;
  for (const auto& r : gradcheck::run_scope(scope, opt)) {
    for (const auto& e : r.entries) {
      const bool pass = e.max_rel_err < opt.tol;
      ok = ok && pass;
      std::printf("%-20s %-28s n=%-5lld max_rel_err=%.3e %s\n", r.suite.c_str(), e.name.c_str(),
                  static_cast<long long>(e.checked), e.max_rel_err, pass ? "PASS" : "FAIL");
    }
  }
  std::printf("gradcheck %s: %s\n", scope.c_str(), ok ? "PASS" : "FAIL");
  return ok ? 0 : kFail;
}

int cmd_oracle(std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : oracle::run_all(seed)) {
    ok = ok && r.pass();
    std::printf("%-36s cases=%-4d max_err=%.3e tol=%s %s\n", r.name.c_str(), r.cases, r.max_err,
                r.tol == 0 ? "exact" : (std::ostringstream() << r.tol).str().c_str(),
                r.pass() ? "PASS" : "FAIL");
  }
  return ok ? 0 : kFail;
}

int cmd_scan_bench(const scanbench::Options& opt, const std::string& out) {
  const auto rows = scanbench::run(opt);
  std::ostringstream csv;
  scanbench::write_csv(csv, rows);
  if (out.empty()) {
    std::cout << csv.str();
  } else {
    fs::create_directories(out);
    write_file(fs::path(out) / "scan_bench.csv", csv.str());
  }
  for (const auto& impl : opt.impls) {
    std::cerr << json{{"impl", impl}, {"loglog_slope", scanbench::loglog_slope(rows, impl)}}.dump()
              << "\n";
  }
  return 0;
}

struct TrainArgs {
  std::string config, out, data;
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_config(a.config);
  if (a.steps) cfg.train.steps = *a.steps;
  if (a.seed) cfg.model.seed = cfg.train.seed = *a.seed;
  harness::check_compatible(cfg);
  const fs::path out(a.out);
  fs::create_directories(out);

  harness::Splits data;
  if (!a.data.empty() && fs::exists(fs::path(a.data) / "train" / "index.json")) {
    data = {scene::load_dataset(fs::path(a.data) / "train"),
            scene::load_dataset(fs::path(a.data) / "eval")};
  } else {
    data = harness::make_splits(cfg.train);
    if (!a.data.empty()) {
      scene::save_dataset(fs::path(a.data) / "train", data.train);
      scene::save_dataset(fs::path(a.data) / "eval", data.eval);
    }
  }

  model::Model m(cfg.model);
  write_file(out / "config.json", to_json(cfg).dump(2) + "\n");
  std::ofstream metrics(out / "metrics.jsonl");
  const auto log = harness::train(m, data.train, data.eval, cfg.train, &metrics);
  checkpoint::save_store(out / "checkpoint.mtkp", m.store());
  write_file(out / "final_metrics.json", harness::to_json(log.final_eval.report).dump(2) + "\n");
  std::ofstream losses(out / "train_loss.jsonl");
  for (std::size_t i = 0; i < log.loss.size(); ++i) {
    losses << json{{"step", i + 1}, {"loss", log.loss[i]}}.dump() << "\n";
  }
  std::cout << json{{"steps", cfg.train.steps},
                    {"final_loss", log.loss.back()},
                    {"eval_loss", log.final_eval.total_loss},
                    {"out", out.string()}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_eval(const std::string& config, const std::string& out, std::string ckpt) {
  const fs::path dir(out);
  const RunConfig cfg = load_config(config.empty() ? (dir / "config.json").string() : config);
  harness::check_compatible(cfg);
  if (ckpt.empty()) ckpt = (dir / "checkpoint.mtkp").string();
  if (!fs::exists(ckpt)) throw Error("io", "missing checkpoint " + ckpt);
  model::Model m(cfg.model);
  checkpoint::load_store(ckpt, m.store());
  const auto data = harness::make_splits(cfg.train);
  const auto r = harness::evaluate(m, data.eval, cfg.train.batch);
  json j = harness::to_json(r.report);
  j["total_loss"] = r.total_loss;
  const std::string text = j.dump(2) + "\n";
  write_file(dir / "eval_metrics.json", text);
  std::cout << text;
  return 0;
}

int cmd_dm(const std::string& mtl, const std::string& stl) {
  const double v = harness::delta_m(harness::metric_report_from_json(read_json(mtl)),
                                    harness::metric_report_from_json(read_json(stl)));
  std::printf("%s\n", harness::format_delta_m(v).c_str());
  return 0;
}

int cmd_count(const std::string& config, std::optional<std::string> mixer, std::int64_t image) {
  RunConfig cfg = load_config(config);
  if (mixer) {
    if (*mixer == "ssm") cfg.model.mixer = nn::MixerKind::ssm;
    else if (*mixer == "attention") cfg.model.mixer = nn::MixerKind::attention;
    else throw Error("usage", "mixer must be ssm or attention");
  }
  cfg.model.validate();
  const std::int64_t hw = image > 0 ? image : cfg.train.image;
  const auto c = model::count_params_flops(cfg.model, hw, hw);
  std::cout << json{{"params", c.params},
                    {"flops", c.flops},
                    {"image", hw},
                    {"breakdown",
                     {{"linear", c.breakdown.linear},
                      {"conv", c.breakdown.conv},
                      {"scan", c.breakdown.scan},
                      {"attention", c.breakdown.attention}}}}
                   .dump()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  parallel::configure_from_env();
  CLI::App app{"mtk: selective-scan multi-task decoder toolkit"};
  app.require_subcommand(1);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suites");
  std::string scope = "kernels";
  gradcheck::Options gopt;
  gc->add_option("--scope", scope)->check(CLI::IsMember(gradcheck::scopes()));
  gc->add_option("--seed", gopt.seed);
  gc->add_option("--eps", gopt.eps);
  gc->add_option("--tol", gopt.tol);
  gc->add_option("--max-entries", gopt.max_entries, "entries per tensor, 0 = all");
  gc->add_flag("--corrupt", gopt.corrupt, "perturb one analytic gradient (negative control)");

  auto* orc = app.add_subcommand("oracle", "kernel vs brute-force equivalence");
  std::uint64_t oracle_seed = 0;
  orc->add_option("--seed", oracle_seed);

  auto* sb = app.add_subcommand("scan-bench", "sequence-length scaling benchmark (CSV)");
  scanbench::Options sopt;
  std::string sb_out;
  sb->add_option("--lengths", sopt.lengths)->delimiter(',');
  sb->add_option("--impl", sopt.impls)
      ->delimiter(',')
      ->check(CLI::IsMember({"seq", "chunked", "attention"}));
  sb->add_option("--repeats", sopt.repeats)->check(CLI::PositiveNumber);
  sb->add_option("--channels", sopt.channels)->check(CLI::PositiveNumber);
  sb->add_option("--state", sopt.state)->check(CLI::PositiveNumber);
  sb->add_option("--chunk", sopt.chunk)->check(CLI::PositiveNumber);
  sb->add_option("--seed", sopt.seed);
  sb->add_flag("--parallel", sopt.parallel);
  sb->add_option("--out", sb_out, "write scan_bench.csv here instead of stdout");

  auto* tr = app.add_subcommand("train", "train a model and write checkpoint + metrics");
  TrainArgs targs;
  tr->add_option("--config", targs.config)->check(CLI::ExistingFile);
  tr->add_option("--steps", targs.steps)->check(CLI::PositiveNumber);
  tr->add_option("--seed", targs.seed);
  tr->add_option("--out", targs.out)->required();
  tr->add_option("--data", targs.data, "dataset cache directory");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_config, ev_out, ev_ckpt;
  ev->add_option("--config", ev_config)->check(CLI::ExistingFile);
  ev->add_option("--out", ev_out)->required();
  ev->add_option("--checkpoint", ev_ckpt);

  auto* dm = app.add_subcommand("dm", "average relative improvement of MTL over STL metrics");
  std::string mtl, stl;
  dm->add_option("--mtl", mtl)->required();
  dm->add_option("--stl", stl)->required();

  auto* cnt = app.add_subcommand("count", "analytic parameter and FLOP counts");
  std::string cnt_config;
  std::optional<std::string> cnt_mixer;
  std::int64_t cnt_image = 0;
  cnt->add_option("--config", cnt_config)->check(CLI::ExistingFile);
  cnt->add_option("--mixer", cnt_mixer);
  cnt->add_option("--image", cnt_image);

  auto* dc = app.add_subcommand("dump-config", "print the (default or given) run config");
  std::string dc_config;
  dc->add_option("--config", dc_config)->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    return kUsage;
  }

  try {
    if (*gc) return cmd_gradcheck(scope, gopt);
    if (*orc) return cmd_oracle(oracle_seed);
    if (*sb) return cmd_scan_bench(sopt, sb_out);
    if (*tr) return cmd_train(targs);
    if (*ev) return cmd_eval(ev_config, ev_out, ev_ckpt);
    if (*dm) return cmd_dm(mtl, stl);
    if (*cnt) return cmd_count(cnt_config, cnt_mixer, cnt_image);
    if (*dc) {
      std::cout << to_json(load_config(dc_config)).dump(2) << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << json{{"error", e.kind()}, {"message", e.what()}}.dump() << "\n";
    return e.kind() == "usage" ? kUsage : kFail;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    return kFail;
  }
  return kUsage;
}
