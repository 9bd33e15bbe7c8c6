#include "commands.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace sksd;
using sksd::cli::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sksd_cli_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Outcome {
  int code;
  std::string log;
  std::string err;
};

Outcome run(const std::string& command, const json& config, const fs::path& out, std::optional<std::uint64_t> seed = 1,
            std::optional<std::size_t> workers = std::nullopt) {
  std::ostringstream log, err;
  cli::RunOptions opts{seed, workers, out.string()};
  const int code = cli::run_command(command, config, opts, log, err);
  return {code, log.str(), err.str()};
}

const json kTinySvgd = {{"dim", 3}, {"particles", 10}, {"steps", 30}, {"trace_every", 10}};

int exit_status(int raw) { return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1; }

}  // namespace

TEST(CliFormat, NumbersRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345678.0}) EXPECT_EQ(std::stod(cli::num(v)), v);
  EXPECT_EQ(cli::num(0.5), "0.5");
  EXPECT_EQ(cli::num(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_EQ(cli::num(std::nan("")), "nan");
}

TEST(CliConfig, UnknownFieldIsAConfigError) {
  json cfg = kTinySvgd;
  cfg["particels"] = 4;
  const auto o = run("svgd", cfg, scratch("unknown"));
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("'particels'"), std::string::npos);
  EXPECT_EQ(std::count(o.err.begin(), o.err.end(), '\n'), 1);
}

TEST(CliConfig, WrongTypeNamesTheField) {
  for (const auto& [key, value] : std::vector<std::pair<std::string, json>>{
           {"steps", "many"}, {"step_size", "big"}, {"staleness", 1}, {"particles", -3}}) {
    json cfg = kTinySvgd;
    cfg[key] = value;
    const auto o = run("svgd", cfg, scratch("type"));
    EXPECT_EQ(o.code, 2) << key;
    EXPECT_NE(o.err.find("'" + key + "'"), std::string::npos) << o.err;
  }
}

TEST(CliConfig, InvalidValuesAreConfigErrors) {
  const auto a = run("svgd", {{"step_size", -1.0}}, scratch("neg"));
  EXPECT_EQ(a.code, 2);
  EXPECT_NE(a.err.find("step_size"), std::string::npos);
  const auto b = run("gof-benchmark", {{"n_train", 900}, {"n_test", 800}}, scratch("split"));
  EXPECT_EQ(b.code, 2);
  EXPECT_NE(b.err.find("n_train"), std::string::npos);
  const auto c = run("ica", {{"objective", "lsd"}}, scratch("obj"));
  EXPECT_EQ(c.code, 2);
  EXPECT_NE(c.err.find("objective"), std::string::npos);
  const auto d = run("gof-benchmark", {{"methods", {"fssd"}}}, scratch("methods"));
  EXPECT_EQ(d.code, 2);
  EXPECT_NE(d.err.find("methods"), std::string::npos);
  EXPECT_EQ(run("svgd", json::array(), scratch("array")).code, 2);
}

TEST(CliConfig, SeedIsRequired) {
  const auto o = run("svgd", kTinySvgd, scratch("noseed"), std::nullopt);
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("seed"), std::string::npos);
}

TEST(CliConfig, FlagsOverrideTheFile) {
  json cfg = kTinySvgd;
  cfg["seed"] = 5;
  cfg["workers"] = 3;
  const auto out = scratch("override");
  ASSERT_EQ(run("svgd", cfg, out, 9, 1).code, 0);
  const auto resolved = json::parse(slurp(out / "run.json")).at("config");
  EXPECT_EQ(resolved.at("seed").get<std::uint64_t>(), 9u);
  EXPECT_EQ(resolved.at("workers").get<std::size_t>(), 1u);
  EXPECT_EQ(resolved.at("particles").get<std::size_t>(), 10u);
  // Defaults are echoed too.
  EXPECT_EQ(resolved.at("sampler").get<std::string>(), "ssvgd");
}

TEST(CliRun, SvgdOutputsAreByteIdenticalForASeed) {
  const auto a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
  ASSERT_EQ(run("svgd", kTinySvgd, a, 4).code, 0);
  ASSERT_EQ(run("svgd", kTinySvgd, b, 4).code, 0);
  ASSERT_EQ(run("svgd", kTinySvgd, c, 5).code, 0);
  EXPECT_EQ(slurp(a / "particles.csv"), slurp(b / "particles.csv"));
  EXPECT_EQ(slurp(a / "diagnostics.csv"), slurp(b / "diagnostics.csv"));
  EXPECT_NE(slurp(a / "particles.csv"), slurp(c / "particles.csv"));
  EXPECT_EQ(slurp(a / "diagnostics.csv").substr(0, 19), "iter,parf,var_avg\n0");
}

TEST(CliRun, GofBenchmarkIgnoresWorkerCount) {
  const json cfg = {{"alternative", "laplace"}, {"dims", {2, 3}}, {"trials", 2}, {"n_samples", 80},
                    {"n_train", 20},            {"n_test", 60},     {"bootstrap", 40}, {"direction_steps", 5}};
  const auto a = scratch("gof_a"), b = scratch("gof_b");
  ASSERT_EQ(run("gof-benchmark", cfg, a, 2, 1).code, 0);
  ASSERT_EQ(run("gof-benchmark", cfg, b, 2, 3).code, 0);
  EXPECT_EQ(slurp(a / "trials.csv"), slurp(b / "trials.csv"));
  EXPECT_EQ(slurp(a / "summary.csv"), slurp(b / "summary.csv"));
  const auto summary = slurp(a / "summary.csv");
  EXPECT_EQ(summary.substr(0, summary.find('\n')), "method,benchmark,dim,rejection_rate,mean_statistic,sd_statistic");
  // 3 methods x 2 dims x 2 trials, plus the header.
  const auto trials = slurp(a / "trials.csv");
  EXPECT_EQ(std::count(trials.begin(), trials.end(), '\n'), 13);
}

TEST(CliRun, RbmUsesTheLevelColumn) {
  const json cfg = {{"dim", 4},   {"hidden", 3},  {"levels", {0.0, 0.5}}, {"trials", 1},
                    {"chains", 40}, {"burn_in", 5}, {"n_train", 10},         {"bootstrap", 20}};
  const auto out = scratch("rbm");
  ASSERT_EQ(run("gof-rbm", cfg, out).code, 0);
  const auto trials = slurp(out / "trials.csv");
  EXPECT_EQ(trials.substr(0, trials.find('\n')), "method,benchmark,level,trial,statistic,p_value,reject");
  EXPECT_NE(trials.find(",rbm,0.5,0,"), std::string::npos);
}

TEST(CliRun, VarianceWritesOneDiagnosticsFilePerRun) {
  const json cfg = {{"dims", {2}}, {"particles", {8, 12}}, {"samplers", {"svgd"}}, {"steps", 20}, {"trace_every", 10}};
  const auto out = scratch("variance");
  ASSERT_EQ(run("variance", cfg, out).code, 0);
  const auto table = slurp(out / "variance.csv");
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 3);
  EXPECT_EQ(slurp(out / "diagnostics_svgd_d2_n12.csv").substr(0, 18), "iter,parf,var_avg\n");
}

TEST(CliRun, RuntimeFailureExitsWithOne) {
  json cfg = kTinySvgd;
  cfg["step_size"] = 1e200;
  cfg["init_mean"] = 1e150;
  const auto o = run("svgd", cfg, scratch("diverge"));
  EXPECT_EQ(o.code, 1);
  EXPECT_EQ(o.err.rfind("error: ", 0), 0u);
}

TEST(CliRun, IcaWithZeroStepsReportsTheInitialNll) {
  const auto out = scratch("ica0");
  ASSERT_EQ(run("ica", {{"dim", 3}, {"n_train", 200}, {"n_test", 100}, {"steps", 0}}, out).code, 0);
  const auto trace = slurp(out / "trace.csv");
  EXPECT_EQ(std::count(trace.begin(), trace.end(), '\n'), 2);
  const auto ckpt = json::parse(slurp(out / "checkpoint.json"));
  EXPECT_EQ(ckpt.at("step").get<std::size_t>(), 0u);
  const auto summary = json::parse(slurp(out / "summary.json"));
  EXPECT_EQ(summary.at("final_test_nll").get<double>(), summary.at("initial_test_nll").get<double>());
  EXPECT_EQ(ckpt.at("nll_trace")[0].at("test_nll").get<double>(), summary.at("initial_test_nll").get<double>());
}

// On a stiff target h = 0.1 blows up; the divergent row scores inf.
TEST(CliRun, SghmcSelectionSkipsADivergentStep) {
  const json cfg = {{"dim", 4},           {"min_eig", 1e-4}, {"candidates", {1e-4, 1e-1}}, {"chains", 60},
                    {"burn_in", 400},     {"thinning", 2},   {"n_samples", 200}};
  const auto out = scratch("sghmc");
  const auto o = run("sghmc-select", cfg, out, 2);
  ASSERT_EQ(o.code, 0) << o.err;
  const auto sel = json::parse(slurp(out / "selection.json"));
  EXPECT_EQ(sel.at("maxsksd-g").get<double>(), 1e-4);
  EXPECT_EQ(sel.at("kl").get<double>(), 1e-4);
  const auto table = slurp(out / "discrepancy.csv");
  EXPECT_EQ(table.substr(0, table.find('\n')), "step_size,diverged,ksd,maxsksd_g,maxsksd_rg,kl");
  EXPECT_NE(table.find("\n0.1,1,inf,inf,inf,inf\n"), std::string::npos);
}

TEST(CliBinary, ExitCodes) {
  const auto dir = scratch("binary");
  fs::create_directories(dir);
  const std::string exe = SKSD_CLI_PATH;
  {
    std::ofstream(dir / "bad.json") << "{\"stepz\": 3}";
    std::ofstream(dir / "broken.json") << "{\"steps\": ";
    std::ofstream(dir / "ok.json") << kTinySvgd.dump();
  }
  auto call = [&](const std::string& args) {
    return exit_status(std::system((exe + " " + args + " >/dev/null 2>&1").c_str()));
  };
  EXPECT_EQ(call("svgd --config " + (dir / "ok.json").string() + " --seed 3 --out " + (dir / "ok").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "ok" / "run.json"));
  EXPECT_EQ(call("svgd --config " + (dir / "bad.json").string() + " --seed 3 --out " + (dir / "x").string()), 2);
  EXPECT_EQ(call("svgd --config " + (dir / "broken.json").string() + " --seed 3 --out " + (dir / "x").string()), 2);
  EXPECT_EQ(call("svgd --seed notanumber --out " + (dir / "x").string()), 2);
  EXPECT_EQ(call("nosuchcommand"), 2);
}
