#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fmdp/cli.hpp"

using namespace fmdp;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::cli_dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("fmdp-cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  static std::string slurp(const std::string& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
  std::string write_config(const std::string& name, const std::string& text) const {
    std::ofstream(path(name)) << text;
    return path(name);
  }
  fs::path dir_;
};

const char* kCopyConfig = R"([domain]
name = copy-chain
D = 5
gamma = 2
A = 2
horizon = 20

[policy]
behavior = uniform
target = uniform

[methods]
list = gscope,ks,flat,mfmc,cis

[sweep]
H = 400
trials = 2
master_seed = 5

[thresholds]
eps = 0.2

[eval]
rollouts = 300
)";

}  // namespace

TEST_F(CliTest, GenDomainWritesSchemaValidFile) {
  const auto r = run({"gen-domain", "taxi", "--out", path("m.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(slurp(path("m.json")));
  for (const char* key : {"D", "gamma", "A", "horizon", "parents", "cpts", "reward", "rho"}) EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["D"], 4);
  EXPECT_EQ(j["cpts"][2].size(), 625u);
  EXPECT_NO_THROW(io::mdp_from_json(j));
}

TEST_F(CliTest, LearnThenEvalChainsThroughFiles) {
  const auto cfg = write_config("c.cfg", kCopyConfig);
  auto r = run({"learn", "--config", cfg, "--out", path("model.json"), "--seed", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto model = json::parse(slurp(path("model.json")));
  for (const char* key : {"phi_hat", "thresholds", "cpts", "sufficient"}) EXPECT_TRUE(model.contains(key)) << key;
  EXPECT_EQ(model["phi_hat"][3], json::array({3}));
  r = run({"eval", "--model", path("model.json"), "--rollouts", "2000", "--target", "uniform", "--out", path("eval.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto e = json::parse(slurp(path("eval.json")));
  EXPECT_EQ(e["method"], "gscope");
  EXPECT_LT(e["normalized_error"].get<double>(), 0.1);
}

TEST_F(CliTest, SampleThenEvalBaselines) {
  ASSERT_EQ(run({"sample", "--domain", "random-fmdp", "--D", "4", "--A", "2", "--horizon", "8", "--H", "30", "--seed", "2",
                 "--out", path("b.json")})
                .code,
            0);
  const auto b = json::parse(slurp(path("b.json")));
  EXPECT_EQ(b["trajectories"].size(), 30u);
  EXPECT_EQ(b["domain"]["name"], "random-fmdp");
  ASSERT_EQ(run({"learn", "--batch", path("b.json"), "--min-count", "3", "--out", path("m.json")}).code, 0);
  const auto chained = run({"eval", "--model", path("m.json"), "--rollouts", "200"});
  ASSERT_EQ(chained.code, 0) << chained.err;
  EXPECT_EQ(json::parse(chained.out)["method"], "gscope");
  for (const char* m : {"gscope", "ks", "flat", "mfmc", "cis"}) {
    const auto r = run({"eval", "--method", m, "--batch", path("b.json"), "--domain", "random-fmdp", "--D", "4", "--A", "2",
                        "--horizon", "8", "--rollouts", "200", "--min-count", "3"});
    ASSERT_EQ(r.code, 0) << m << r.err;
    EXPECT_EQ(json::parse(r.out)["method"], m);
  }
}

TEST_F(CliTest, SweepPopulatesCsvAndSummaryDeterministically) {
  const auto cfg = write_config("c.cfg", kCopyConfig);
  ASSERT_EQ(run({"sweep", "--config", cfg, "--out", path("runs")}).code, 0);
  const auto csv = slurp(path("runs/results.csv"));
  const auto summary = json::parse(slurp(path("runs/summary.json")));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), bench::kCsvHeader);
  EXPECT_EQ(bench::parse_csv(csv).size(), 10u);
  ASSERT_TRUE(summary.contains("cells"));
  for (const auto& c : summary["cells"])
    for (const char* key : {"method", "H", "median", "q1", "q3", "n"}) EXPECT_TRUE(c.contains(key)) << key;
  EXPECT_EQ(bench::parse_config(summary["config"].get<std::string>()).master_seed, 5u);
  ASSERT_EQ(run({"sweep", "--config", cfg, "--out", path("again"), "--workers", "3"}).code, 0);
  EXPECT_EQ(slurp(path("again/results.csv")), csv);
  const auto rep = run({"report", "--in", path("runs/results.csv")});
  ASSERT_EQ(rep.code, 0);
  EXPECT_EQ(json::parse(rep.out)["cells"], summary["cells"]);
}

TEST_F(CliTest, TheorySubcommands) {
  auto r = run({"theory", "bound", "--eps", "0.1", "--m", "1", "--D", "1", "--psi", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NEAR(json::parse(r.out)["eps_star"].get<double>(), 0.5, 1e-15);
  r = run({"theory", "psi", "--domain", "copy-chain", "--D", "3", "--horizon", "4", "--behavior", "uniform", "--target", "uniform"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const auto& p : json::parse(r.out)["psi"]) EXPECT_NEAR(p.get<double>(), 1.0, 1e-12);
  r = run({"theory", "psi", "--domain", "copy-chain", "--D", "3", "--horizon", "4", "--behavior", "fixed:0", "--target", "uniform"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["psi"][0], "inf");
  r = run({"theory", "assumptions", "--domain", "assumption3-violation"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_FALSE(json::parse(r.out)["a3_holds"].get<bool>());
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run({}).code, 1);
  const auto bad = run({"frobnicate"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_FALSE(bad.err.empty());
  EXPECT_EQ(run({"gen-domain", "taxi", "--bogus"}).code, 1);
  EXPECT_EQ(run({"gen-domain", "no-such-domain"}).code, 1);
  EXPECT_EQ(run({"sweep", "--out", path("x")}).code, 1);
  EXPECT_EQ(run({"--help"}).code, 0);
  const auto refused = run({"theory", "psi", "--domain", "random-fmdp", "--D", "20"});
  EXPECT_EQ(refused.code, 2);
  EXPECT_NE(refused.err.find("refused"), std::string::npos);
}
