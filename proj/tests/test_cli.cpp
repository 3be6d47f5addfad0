#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tandemscale/cli.hpp"

namespace fs = std::filesystem;
using namespace tandemscale;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "tandemscale");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("tandemscale_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::string write(const std::string& name, const std::string& body) const {
    std::ofstream(path(name)) << body;
    return path(name);
  }
  static std::string slurp(const std::string& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }

  fs::path dir_;
};

// Second CSV line after the manifest comment and the header.
std::vector<std::string> first_row(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  std::getline(in, line);
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

}  // namespace

TEST_F(Cli, GenTraceBatch) {
  auto r = run({"gen-trace", "batch", "--n", "10", "--k", "3", "-o", path("t.jsonl")});
  EXPECT_EQ(r.code, 0) << r.err;
  auto trace = load_trace(path("t.jsonl"));
  EXPECT_EQ(trace.size(), 10u);
  EXPECT_EQ(trace.servers, 3);
  EXPECT_NE(slurp(path("t.jsonl")).find("\"manifest\""), std::string::npos);
}

TEST_F(Cli, GenTracePoissonDeterministic) {
  auto a = run({"gen-trace", "poisson", "--rate", "2", "--horizon", "50", "--seed", "1", "--k", "2"});
  auto b = run({"gen-trace", "poisson", "--rate", "2", "--horizon", "50", "--seed", "1", "--k", "2"});
  EXPECT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  std::istringstream in(a.out);
  EXPECT_EQ(parse_trace(in), gen_poisson(2.0, 50.0, 1, 2));
}

TEST_F(Cli, MissingKIsUsageError) {
  auto r = run({"gen-trace", "batch", "--n", "10"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--k"), std::string::npos);
}

TEST_F(Cli, NoSubcommandIsUsageError) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(Cli, SimulateSingleJob) {
  const auto t = write("one.jsonl", "{\"K\":2}\n{\"t\":0}\n");
  for (const char* policy : {"proposed", "autonomous", "replication"}) {
    auto r = run({"simulate", t, "--policy", policy, "--power", "1,2", "--trajectory", path("traj.json")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out.rfind("# manifest ", 0), 0u);
    const auto row = first_row(r.out);
    ASSERT_EQ(row.size(), 6u);
    EXPECT_EQ(row[0], policy);
    EXPECT_NEAR(std::stod(row[5]), 3.0 * std::sqrt(2.0), 1e-12);
    auto traj = nlohmann::json::parse(slurp(path("traj.json")));
    EXPECT_EQ(traj.at("manifest").at("subcommand"), "simulate");
    EXPECT_EQ(traj.at("policy"), policy);
  }
}

TEST_F(Cli, SimulateErrors) {
  const auto t = write("one.jsonl", "{\"K\":2}\n{\"t\":0}\n");
  EXPECT_EQ(run({"simulate", t, "--policy", "nope"}).code, 2);
  EXPECT_EQ(run({"simulate", t, "--power", "1"}).code, 2);
  EXPECT_EQ(run({"simulate", t, "--power", "1,0.5"}).code, 2);
  EXPECT_EQ(run({"simulate", path("missing.jsonl")}).code, 2);
  const auto bad = write("bad.jsonl", "{\"K\":1}\n{\"t\":2}\n{\"t\":1}\n");
  auto r = run({"simulate", bad});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("unsorted"), std::string::npos);
}

TEST_F(Cli, AuditBatch) {
  const auto t = write("b.jsonl", "{\"K\":3}\n{\"t\":0}\n{\"t\":0}\n{\"t\":0}\n{\"t\":0}\n{\"t\":0}\n");
  auto r = run({"audit", t, "--c", "6"});
  EXPECT_EQ(r.code, 0) << r.out;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j.at("audit").at("pass").get<bool>());
  EXPECT_EQ(j.at("audit").at("violations"), 0);

  auto neg = run({"audit", t, "--c", "0.1"});
  EXPECT_EQ(neg.code, 1);
  EXPECT_GT(nlohmann::json::parse(neg.out).at("audit").at("violations").get<int>(), 0);
}

TEST_F(Cli, AuditEmptyTrace) {
  const auto t = write("e.jsonl", "{\"K\":2}\n");
  auto r = run({"audit", t});
  EXPECT_EQ(r.code, 0);
  auto j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j.at("audit").at("pass").get<bool>());
  EXPECT_TRUE(j.at("ratios").at("vs_opt_e").is_null());
}

TEST_F(Cli, OptBound) {
  const auto t = write("one.jsonl", "{\"K\":1}\n{\"t\":0}\n");
  auto r = run({"optbound", t});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_NEAR(j.at("opt_e_cost").get<double>(), 2.0, 1e-9);
  EXPECT_DOUBLE_EQ(j.at("closed_form_lb").get<double>(), 2.0);
  EXPECT_DOUBLE_EQ(j.at("competitive_bound").get<double>(), 18.0);
  EXPECT_FALSE(j.at("manifest").at("inputs").empty());
}

TEST_F(Cli, Stochastic) {
  const auto cfg = write("net.json", R"({"lambda": 1, "layers": [{"m": 1, "mu": 1, "c": 1, "alpha": 2}]})");
  auto r = run({"stochastic", cfg, "--horizon", "1e6", "--seed", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out);
  const auto& l = j.at("layers").at(0);
  EXPECT_DOUBLE_EQ(l.at("closed_form").get<double>(), 3.0);
  EXPECT_NEAR(l.at("simulated_cost").get<double>(), 3.0, 0.06);
  EXPECT_DOUBLE_EQ(l.at("certificate").get<double>(), 3.0);
  EXPECT_DOUBLE_EQ(j.at("manifest").at("params").at("warmup").get<double>(), 1e5);

  auto csv = run({"stochastic", cfg, "--horizon", "1e4", "--format", "csv"});
  EXPECT_EQ(csv.code, 0);
  EXPECT_EQ(first_row(csv.out).at(9), "3");
}

TEST_F(Cli, StochasticBadConfig) {
  const auto cfg = write("bad.json", R"({"lambda": 1, "layers": [{"m": 1, "mu": 1, "c": 1, "alpha": 1}]})");
  auto r = run({"stochastic", cfg});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("alpha"), std::string::npos);
  EXPECT_EQ(run({"stochastic", write("junk.json", "{nope")}).code, 2);
}

TEST_F(Cli, SweepFinalBoundHolds) {
  auto r = run({"sweep", "--n", "1..50", "--k", "1,2,4,8", "--patterns", "batch", "--policies", "proposed"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  EXPECT_EQ(line.rfind("n,K,pattern,policy", 0), 0u);
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    EXPECT_GE(std::stod(cells.at(11)), 0.0) << line;
  }
  EXPECT_EQ(rows, 200);
}

TEST_F(Cli, SweepEmptyGrid) {
  auto r = run({"sweep", "--n", ""});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 2);
}

TEST_F(Cli, SweepOrderIgnoresThreadCount) {
  const std::vector<std::string> args = {"sweep", "--n", "1..8", "--k", "1,3", "--patterns", "batch,trickle,poisson",
                                         "--policies", "proposed,autonomous,replication", "--audit"};
  ::setenv("TANDEMSCALE_THREADS", "1", 1);
  auto one = run(args);
  ::setenv("TANDEMSCALE_THREADS", "4", 1);
  auto four = run(args);
  ::unsetenv("TANDEMSCALE_THREADS");
  EXPECT_EQ(one.code, 0) << one.err;
  EXPECT_EQ(one.out, four.out);
}

TEST_F(Cli, SweepRejectsBadLists) {
  EXPECT_EQ(run({"sweep", "--n", "1..x"}).code, 2);
  EXPECT_EQ(run({"sweep", "--k", "0"}).code, 2);
  EXPECT_EQ(run({"sweep", "--patterns", "zigzag"}).code, 2);
  EXPECT_EQ(run({"sweep", "--policies", "fastest"}).code, 2);
}

TEST_F(Cli, RerunsAreByteIdentical) {
  const auto t = write("p.jsonl", run({"gen-trace", "poisson", "--n", "12", "--k", "2", "--seed", "5"}).out);
  for (const std::vector<std::string>& args :
       {std::vector<std::string>{"simulate", t, "--policy", "replication"}, std::vector<std::string>{"audit", t},
        std::vector<std::string>{"optbound", t}}) {
    auto a = run(args);
    auto b = run(args);
    EXPECT_EQ(a.code, 0) << a.err;
    EXPECT_EQ(a.out, b.out);
  }
}

TEST(CliHelpers, IntList) {
  EXPECT_EQ(parse_int_list("1..4,8"), (std::vector<long>{1, 2, 3, 4, 8}));
  EXPECT_TRUE(parse_int_list("").empty());
  EXPECT_THROW(parse_int_list("a"), UsageError);
}

TEST(CliHelpers, Sha256) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(CliHelpers, PowerFlag) {
  auto pf = parse_power("2,3,4");
  EXPECT_EQ(pf.coefficient(), 2.0);
  EXPECT_EQ(pf.exponent(), 3.0);
  EXPECT_EQ(pf.speed_cap(), std::optional<double>(4.0));
  EXPECT_THROW(parse_power("1,2,3,4"), UsageError);
  EXPECT_THROW(parse_power("1,x"), UsageError);
}
