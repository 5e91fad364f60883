#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "mdperc_app.hpp"

namespace fs = std::filesystem;
using namespace mdperc::app;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mdperc_cli_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MDPERC_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string l;
  while (std::getline(ss, l)) out.push_back(l);
  return out;
}

}  // namespace

TEST(Resolve, DefaultsAndOverrides) {
  const auto s = resolve("crossing-prob", json{{"p", 0.3}, {"seed", 9}}, {{"n", "12"}});
  EXPECT_DOUBLE_EQ(s.params["p"].get<double>(), 0.3);
  EXPECT_EQ(s.params["n"].get<std::int64_t>(), 12);
  EXPECT_EQ(s.params["replicas"].get<std::int64_t>(), 1000);
  EXPECT_EQ(s.seed, 9u);
}

TEST(Resolve, RejectsUnknownKeysAndBadTypes) {
  EXPECT_THROW(resolve("crossing-prob", json{{"q", 1}}, {}), ValidationError);
  EXPECT_THROW(resolve("crossing-prob", json::object(), {{"n", "abc"}}), ValidationError);
  EXPECT_THROW(resolve("crossing-prob", json::object(), {{"n", "2.5"}}), ValidationError);
  EXPECT_THROW(resolve("crossing-prob", json::object(), {{"replicas", "0"}}), ValidationError);
  EXPECT_THROW(resolve("pc", json::object(), {{"seed", "-3"}}), ValidationError);
  EXPECT_THROW(resolve("nope", json::object(), {}), ValidationError);
  try {
    resolve("window", json{{"alpha", "x"}}, {});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("alpha"), std::string::npos);
  }
}

TEST(Resolve, RangeChecksNameTheKey) {
  auto message = [](const std::string& cmd, std::map<std::string, std::string> flags) -> std::string {
    try {
      validate_settings(resolve(cmd, json::object(), flags));
    } catch (const ValidationError& e) {
      return e.what();
    }
    return "";
  };
  EXPECT_NE(message("crossing-prob", {{"p", "1.2"}}).find("'p'"), std::string::npos);
  EXPECT_NE(message("crossing-prob", {{"k", "0"}}).find("'k'"), std::string::npos);
  EXPECT_NE(message("crossing-prob", {{"t", "-1"}}).find("'t'"), std::string::npos);
  EXPECT_NE(message("window", {{"alpha", "0.5"}}).find("'alpha'"), std::string::npos);
  EXPECT_NE(message("exact-oracle", {{"fd_step", "0.5"}}).find("'fd_step'"), std::string::npos);
  EXPECT_NE(message("crossing-prob", {{"rule", "glauber"}}).find("'rule'"), std::string::npos);
  EXPECT_EQ(message("crossing-prob", {}), "");
}

TEST(Resolve, ManifestIsAcceptedAsConfig) {
  json manifest = {{"artifact", "mdperc"}, {"config", {{"command", "pc"}, {"seed", 4}, {"ns", {4, 8}}}}};
  const auto s = resolve("pc", manifest, {});
  EXPECT_EQ(s.seed, 4u);
  EXPECT_EQ(s.params["ns"].size(), 2u);
  EXPECT_THROW(resolve("window", manifest, {}), ValidationError);
}

TEST(ResultsCsv, EmptyFieldsForMissingParameters) {
  Row r;
  r.quantity = "x";
  r.p = 0.1;
  r.estimate = 1.0 / 3.0;
  r.seed = "seed=1;exp=e";
  std::ostringstream os;
  write_results_csv(os, "e", {r});
  const auto ls = lines(os.str());
  ASSERT_EQ(ls.size(), 2u);
  EXPECT_EQ(ls[0], "experiment,quantity,p,t,k,n,alpha,estimate,stderr,replicas,seed");
  EXPECT_EQ(ls[1], "e,x,0.10000000000000001,,,,,0.33333333333333331,,,seed=1;exp=e");
  EXPECT_EQ(os.str().find('\r'), std::string::npos);
}

TEST(Cli, ValidationExitCodes) {
  const auto out = scratch("v");
  EXPECT_EQ(run_cli("crossing-prob --p 1.5 --out " + out.string()), 2);
  EXPECT_FALSE(fs::exists(out / "results.csv"));
  EXPECT_EQ(run_cli("crossing-prob --unknown 3"), 2);
  EXPECT_EQ(run_cli("crossing-prob --threads zero"), 2);
  EXPECT_EQ(run_cli("crossing-prob --config /nonexistent.json"), 2);
  EXPECT_EQ(run_cli("exact-oracle --max_bits 30"), 2);
}

TEST(Cli, ResourceExitCode) {
  const auto out = scratch("res");
  EXPECT_EQ(run_cli("exact-oracle --max_bits 1 --t 1 --out " + out.string()), 3);
}

TEST(Cli, FullyOpenCrossingIsCertain) {
  const auto out = scratch("open");
  ASSERT_EQ(run_cli("crossing-prob --p 1 --n 8 --replicas 40 --seed 5 --out " + out.string()), 0);
  const auto ls = lines(slurp(out / "results.csv"));
  ASSERT_GE(ls.size(), 2u);
  EXPECT_EQ(ls[1], "crossing-prob,crossing_probability,1,1,1,8,,1,0,40,seed=5;exp=crossing-prob");
  const auto m = json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(m["artifact"], "mdperc");
  EXPECT_EQ(m["config"]["p"].get<double>(), 1.0);
  EXPECT_TRUE(m.contains("start") && m.contains("end") && m.contains("wall_time_s"));
}

TEST(Cli, DeterministicAcrossThreadCountsAndReruns) {
  const auto a = scratch("a"), b = scratch("b"), c = scratch("c");
  const std::string args = "window --n 8 --t 0.5 --k 2 --replicas 200 --seed 17";
  ASSERT_EQ(run_cli(args + " --threads 1 --out " + a.string()) % 4, 0);
  ASSERT_EQ(run_cli(args + " --threads 4 --out " + b.string()) % 4, 0);
  EXPECT_EQ(slurp(a / "results.csv"), slurp(b / "results.csv"));
  ASSERT_EQ(run_cli("window --config " + (a / "manifest.json").string() + " --out " + c.string()) % 4, 0);
  EXPECT_EQ(slurp(a / "results.csv"), slurp(c / "results.csv"));
}

TEST(Cli, EnvironmentThreadsOverride) {
  const auto a = scratch("env");
  ::setenv("MPL_THREADS", "3", 1);
  ASSERT_EQ(run_cli("quenched --n 6 --inner 30 --out " + a.string()), 0);
  ::unsetenv("MPL_THREADS");
  EXPECT_EQ(json::parse(slurp(a / "manifest.json"))["threads_used"].get<int>(), 3);
}

TEST(Cli, TracesAreWritten) {
  const auto r = scratch("rv"), a = scratch("au");
  ASSERT_EQ(run_cli("revealment --n 6 --inner 10 --out " + r.string()), 0);
  EXPECT_TRUE(fs::exists(r / "traces" / "trace_field0.csv"));
  EXPECT_TRUE(fs::exists(r / "traces" / "revealment_field0.csv"));
  const int code = run_cli("renorm --L1 2 --levels 1 --replicas 10 --out " + a.string());
  EXPECT_TRUE(code == 0 || code == 4);
  const auto ls = lines(slurp(a / "traces" / "audit.csv"));
  ASSERT_EQ(ls.size(), 3u);
  EXPECT_EQ(ls[0], "level,L_k,p_k_hat,p_k_stderr,N_pairs,corr_hat,rhs,satisfied");
  EXPECT_NE(ls[2].find("NA"), std::string::npos);
}

TEST(Cli, FlaggedRunsStillWriteResults) {
  const auto a = scratch("flag");
  // At p = 0 every audited level has p_k = 0, which is flagged.
  EXPECT_EQ(run_cli("renorm --p 0 --L1 2 --levels 1 --replicas 5 --out " + a.string()), 4);
  EXPECT_TRUE(fs::exists(a / "results.csv"));
  EXPECT_TRUE(json::parse(slurp(a / "manifest.json"))["flagged"].get<bool>());
}
