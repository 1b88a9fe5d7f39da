#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out, err;
};

const fs::path& scratch() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "mtk_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run run(const std::string& args) {
  const auto err_path = scratch() / "stderr.txt";
  const std::string cmd = std::string(MTK_CLI) + " " + args + " 2>" + err_path.string();
  FILE* p = popen(cmd.c_str(), "r");
  std::string out;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) out.append(buf, n);
  const int status = pclose(p);
  std::ifstream e(err_path);
  std::stringstream es;
  es << e.rdbuf();
  return {WEXITSTATUS(status), out, es.str()};
}

void write(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

std::string report(double a, double b, double c, double d) {
  return json{{"tasks",
               {{{"task", "semseg"}, {"metric", "miou"}, {"value", a}, {"higher_better", true}},
                {{"task", "depth"}, {"metric", "rmse"}, {"value", b}, {"higher_better", false}},
                {{"task", "normal"}, {"metric", "mean_angular_error"}, {"value", c}, {"higher_better", false}},
                {{"task", "boundary"}, {"metric", "boundary_f1"}, {"value", d}, {"higher_better", true}}}}}
      .dump();
}

}  // namespace

TEST(Cli, DeltaMFromFiles) {
  write(scratch() / "stl.json", report(54.32, 0.5166, 19.21, 77.30));
  write(scratch() / "mtl.json", report(57.01, 0.4818, 18.27, 79.40));
  write(scratch() / "attn.json", report(55.15, 0.4945, 18.72, 79.00));
  const auto stl = (scratch() / "stl.json").string();
  auto r = run("dm --mtl " + (scratch() / "mtl.json").string() + " --stl " + stl);
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "+4.82\n");
  EXPECT_EQ(run("dm --mtl " + stl + " --stl " + stl).out, "+0.00\n");
  EXPECT_EQ(run("dm --mtl " + (scratch() / "attn.json").string() + " --stl " + stl).out, "+2.63\n");
}

TEST(Cli, UsageErrorsAreMachineReadable) {
  for (const std::string args : {"", "bogus", "dm --frobnicate 1", "gradcheck --scope nope"}) {
    const auto r = run(args);
    EXPECT_EQ(r.code, 2) << args;
    const auto j = json::parse(r.err.substr(0, r.err.find('\n')));
    EXPECT_EQ(j["error"], "usage");
  }
}

TEST(Cli, GradcheckVerdicts) {
  EXPECT_EQ(run("gradcheck --scope kernels --seed 3").code, 0);
  EXPECT_EQ(run("gradcheck --scope kernels --corrupt").code, 1);
  EXPECT_EQ(run("gradcheck --scope kernels --corrupt --tol 1e30").code, 0);
  EXPECT_EQ(run("oracle").code, 0);
}

TEST(Cli, ScanBenchCsv) {
  const auto r = run("scan-bench --lengths 64,128 --impl seq,attention --repeats 1");
  ASSERT_EQ(r.code, 0);
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "impl,L,mean_ns,stddev");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(line.substr(line.rfind(',') + 1), "0");
  }
  EXPECT_EQ(rows, 4);
  EXPECT_NE(r.err.find("loglog_slope"), std::string::npos);
  EXPECT_EQ(run("scan-bench --lengths 128,64").code, 2);
}

TEST(Cli, TrainEvalCycle) {
  const auto dir = scratch() / "run";
  json cfg = json::parse(run("dump-config").out);
  cfg["model"]["channels"] = 8;
  cfg["model"]["state"] = 4;
  cfg["train"]["image"] = 32;
  cfg["train"]["train_samples"] = 4;
  cfg["train"]["eval_samples"] = 2;
  cfg["train"]["eval_interval"] = 100;
  write(scratch() / "tiny.json", cfg.dump());
  const auto t = run("train --config " + (scratch() / "tiny.json").string() + " --steps 10 --seed 4 --out " +
                     dir.string());
  ASSERT_EQ(t.code, 0) << t.err;
  std::ifstream metrics(dir / "metrics.jsonl");
  int per_task = 0;
  for (std::string line; std::getline(metrics, line);) {
    const auto j = json::parse(line);
    EXPECT_EQ(j.size(), 4u);
    EXPECT_EQ(j["step"], 10);
    per_task += j["metric"] != "loss";
  }
  EXPECT_EQ(per_task, 4);

  const auto e1 = run("eval --out " + dir.string()), e2 = run("eval --out " + dir.string());
  ASSERT_EQ(e1.code, 0) << e1.err;
  EXPECT_EQ(e1.out, e2.out);
  EXPECT_EQ(json::parse(e1.out)["tasks"].size(), 4u);

  // Corrupt magic -> schema error, exit 1.
  std::fstream f(dir / "checkpoint.mtkp", std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(0);
  f.write("XXXX", 4);
  f.close();
  const auto bad = run("eval --out " + dir.string());
  EXPECT_EQ(bad.code, 1);
  EXPECT_EQ(json::parse(bad.err.substr(0, bad.err.find('\n')))["error"], "schema");
  EXPECT_EQ(run("eval --out " + (scratch() / "missing").string()).code, 1);
}

TEST(Cli, CountAndConfigSchema) {
  const auto ssm = json::parse(run("count").out), attn = json::parse(run("count --mixer attention").out);
  EXPECT_LT(ssm["flops"].get<double>(), attn["flops"].get<double>());
  EXPECT_LT(ssm["params"].get<long>(), attn["params"].get<long>());
  json cfg = json::parse(run("dump-config").out);
  cfg["train"]["bogus"] = 1;
  write(scratch() / "bad.json", cfg.dump());
  const auto r = run("dump-config --config " + (scratch() / "bad.json").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(json::parse(r.err.substr(0, r.err.find('\n')))["error"], "schema");
}
