#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dtameta/reitsma.hpp"
#include "dtameta/sroc.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace dtameta;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("dtameta_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    table_ = dtameta::testing::synthetic_table(30, 71);
    write("studies.csv", to_csv(table_));
  }
  void TearDown() override { fs::remove_all(dir_); }

  void write(const std::string& name, const std::string& text) {
    std::ofstream(dir_ / name, std::ios::binary) << text;
  }
  std::string read(const fs::path& p) const {
    std::ifstream in(p, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
  }
  int run(const std::string& args) const {
    const std::string cmd = std::string(DTAMETA_CLI_PATH) + " " + args + " >" + (dir_ / "stdout.txt").string() +
                            " 2>" + (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string in() const { return (dir_ / "studies.csv").string(); }
  std::string out(const std::string& sub) const { return (dir_ / sub).string(); }

  fs::path dir_;
  StudyTable table_;
};

}  // namespace

TEST_F(CliTest, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("fit --help"), 0);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("fit"), 2);
  EXPECT_EQ(run("bogus"), 2);
}

TEST_F(CliTest, FitWritesArtifacts) {
  ASSERT_EQ(run("fit -i " + in() + " -o " + out("fit")), 0);
  for (const char* f : {"fit.json", "sroc.json", "sauc.json", "sop.json"}) EXPECT_TRUE(fs::exists(dir_ / "fit" / f)) << f;
  const auto j = nlohmann::json::parse(read(dir_ / "fit" / "sauc.json"));
  const auto fit = fit_reitsma(prepare_sample(table_));
  EXPECT_NEAR(j["value"].get<double>(), sauc(fit, CurveKind::sroc).value, 1e-12);
}

TEST_F(CliTest, OutputIsByteStable) {
  ASSERT_EQ(run("fit -i " + in() + " -o " + out("a")), 0);
  ASSERT_EQ(run("fit -i " + in() + " -o " + out("b")), 0);
  EXPECT_EQ(read(dir_ / "a" / "fit.json"), read(dir_ / "b" / "fit.json"));
  EXPECT_EQ(read(dir_ / "a" / "sroc.json"), read(dir_ / "b" / "sroc.json"));
}

TEST_F(CliTest, GlmmAndSummaryAndFunnel) {
  EXPECT_EQ(run("fit --model glmm --nodes 9 -i " + in() + " -o " + out("g")), 0);
  EXPECT_EQ(nlohmann::json::parse(read(dir_ / "g" / "fit.json"))["method"], "glmm");
  EXPECT_EQ(run("summary --scatter region -i " + in() + " -o " + out("s")), 0);
  for (const char* f : {"summary.json", "metrics.csv", "scatter.json", "forest.json"}) {
    EXPECT_TRUE(fs::exists(dir_ / "s" / f)) << f;
  }
  EXPECT_EQ(run("funnel -i " + in() + " -o " + out("f")), 0);
  EXPECT_TRUE(fs::exists(dir_ / "f" / "funnel.csv"));
}

TEST_F(CliTest, SensitivityAtPOneMatchesMaximumLikelihood) {
  ASSERT_EQ(run("sa --p 1 -i " + in() + " -o " + out("sa")), 0);
  const auto grid = nlohmann::json::parse(read(dir_ / "sa" / "grid.json"));
  const auto fit = fit_reitsma(prepare_sample(table_));
  ASSERT_EQ(grid["cells"].size(), 4u);
  for (const auto& c : grid["cells"]) {
    EXPECT_NEAR(c["mu"][0].get<double>(), fit.params.mu1, 1e-4);
    EXPECT_NEAR(c["rho"].get<double>(), fit.params.rho, 1e-4);
  }
  std::istringstream csv(read(dir_ / "sa" / "grid.csv"));
  std::string line;
  int rows = -1;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 4);
}

TEST_F(CliTest, ValidationExitCodes) {
  write("bad.csv", "TP,FP,FN\n1,2,3\n");
  EXPECT_EQ(run("fit -i " + (dir_ / "bad.csv").string() + " -o " + out("x")), 2);
  EXPECT_NE(read(dir_ / "stderr.txt").find("E_SCHEMA"), std::string::npos);
  EXPECT_EQ(run("fit --alpha 2 -i " + in()), 2);
  EXPECT_EQ(run("fit --model glmm --nodes 4 -i " + in()), 2);
  EXPECT_EQ(run("sa --p 1,0 -i " + in() + " -o " + out("y")), 2);
  write("one.csv", "TP,FP,FN,TN\n10,2,3,40\n");
  EXPECT_EQ(run("fit -i " + (dir_ / "one.csv").string() + " -o " + out("z")), 3);
  EXPECT_NE(read(dir_ / "stderr.txt").find("E_NOFIT"), std::string::npos);
}

TEST_F(CliTest, JsonConfigFile) {
  write("cfg.json", nlohmann::json{{"input", in()}, {"out", out("cfg")}, {"method", "reml"}}.dump());
  ASSERT_EQ(run("fit --config " + (dir_ / "cfg.json").string()), 0);
  EXPECT_EQ(nlohmann::json::parse(read(dir_ / "cfg" / "fit.json"))["method"], "reml");
}

TEST_F(CliTest, SimulateIsReproducible) {
  const std::string args = "simulate --studies 40 --arms uniform:50:100 --seed 5 --select se --beta 0.2 -o ";
  ASSERT_EQ(run(args + out("a")), 0);
  ASSERT_EQ(run(args + out("b")), 0);
  EXPECT_EQ(read(dir_ / "a" / "table.csv"), read(dir_ / "b" / "table.csv"));
  EXPECT_EQ(read(dir_ / "a" / "published.csv"), read(dir_ / "b" / "published.csv"));
  const auto truth = nlohmann::json::parse(read(dir_ / "a" / "truth.json"));
  EXPECT_LE(truth["selection"]["empirical_p"].get<double>(), 1.0);
}
