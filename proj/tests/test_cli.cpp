#include <sys/wait.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "qcm/sweep.hpp"

using namespace qcm;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(QCM_CLI_PATH) + " " + args + " 2>/dev/null";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  while (auto n = fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    std::mt19937_64 gen(std::random_device{}());
    dir_ = fs::temp_directory_path() / ("qcm_cli_" + std::to_string(gen() % 1000000000));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write(const std::string& name, const std::string& text) {
    const auto p = dir_ / name;
    std::ofstream(p) << text;
    return p.string();
  }

  std::string sweep_config(double max_proposals = 1e13) {
    nlohmann::json j{{"schema_version", 1},
                     {"J", 0.8},
                     {"B", 1.0},
                     {"alpha_grid", {0.0, 0.1}},
                     {"sizes", {{4, 8}}},
                     {"plan", {{"burn_in_sweeps", 20}, {"n_samples", 64}, {"max_proposals", max_proposals}}},
                     {"replicas", 1},
                     {"master_seed", 5},
                     {"output_dir", (dir_ / "sweep").string()}};
    return write("sweep.json", j.dump());
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("sweep").code, 2);
  EXPECT_EQ(run("--version").code, 0);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, OracleFixtureAndRefusal) {
  const auto r = run("oracle --J 0.3 --B 1 --alpha 0.2 --Nx 2 --Ntau 3");
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_NEAR(j["logZ"].get<double>(), 5.04391099144265662654, 1e-12);
  EXPECT_NEAR(j["expectations"]["sum_s"].get<double>(), 0.0, 1e-12);
  EXPECT_EQ(run("oracle --Nx 5 --Ntau 5").code, 2);
  EXPECT_EQ(run("oracle --Nx 1 --Ntau 5").code, 2);
  const auto cfg = write("p.json", R"({"J":1,"B":1,"alpha":0,"s":1,"Nx":2,"Ntau":2})");
  EXPECT_EQ(run("oracle --config " + cfg + " --out " + (dir_ / "o").string()).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "o" / "oracle.json"));
}

TEST_F(Cli, RgReports) {
  auto r = run("rg --epsilon 1");
  ASSERT_EQ(r.code, 0);
  auto j = nlohmann::json::parse(r.out);
  EXPECT_NEAR(j["fixed_point"]["delta"].get<double>(), -0.2, 1e-15);
  EXPECT_EQ(j["short_time"]["F_exponent_N"].get<double>(), 1.0);

  r = run("rg --s 0.5");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(nlohmann::json::parse(r.out)["short_time"]["F_exponent_N"].get<double>(), -1.0);

  EXPECT_EQ(run("rg --s 1").code, 2);
  r = run("rg --s 1 --z-plus-eta 2");
  ASSERT_EQ(r.code, 0);
  j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["short_time"]["F_exponent_N"].get<double>(), 1.0);
  EXPECT_TRUE(j["long_time"].contains("unavailable"));
  EXPECT_EQ(run("rg --epsilon 1 --s 1").code, 2);
  EXPECT_EQ(run("rg").code, 2);

  ASSERT_EQ(run("rg --epsilon 0.5 --t-end 5 --out " + (dir_ / "rg").string()).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "rg" / "flow.csv"));
}

TEST_F(Cli, SweepResumeAndBudget) {
  const auto cfg = sweep_config();
  const auto out = (dir_ / "sweep").string();
  EXPECT_EQ(run("sweep --config " + cfg + " --resume").code, 2);  // nothing to resume yet
  auto r = run("sweep --config " + cfg + " --stop-after-sweeps 30");
  ASSERT_EQ(r.code, 0);
  EXPECT_FALSE(nlohmann::json::parse(r.out)["complete"].get<bool>());
  r = run("resume --out " + out + " --workers 2");
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(nlohmann::json::parse(r.out)["complete"].get<bool>());
  EXPECT_TRUE(fs::exists(fs::path(out) / "merged.csv"));
  EXPECT_EQ(run("sweep --config " + cfg + " --seed 6").code, 2);  // different sweep, same directory
  EXPECT_EQ(run("sweep --config " + sweep_config(100.0) + " --out " + (dir_ / "b").string()).code, 3);
  EXPECT_EQ(run("resume --out " + (dir_ / "missing").string()).code, 2);
  const auto bad = write("bad.json", R"({"J": 1})");
  EXPECT_EQ(run("sweep --config " + bad).code, 2);
}

TEST_F(Cli, FitScalingExitCodes) {
  auto csv = [&](const std::string& name, const std::vector<int>& sizes, bool boundary) {
    std::string text = merged_csv_header();
    for (int n : sizes)
      for (int k = 0; k < 9; ++k) {
        const double a = 0.05 * k;
        const double peak = boundary ? 1.0 : 0.2 - 1.0 / n;
        const double chi = n * (1.0 - 20.0 * (a - peak) * (a - peak));
        text += merged_csv_line({n, 4 * n, a, 0, chi, 0.01 * n, NAN, NAN});
      }
    return write(name, text);
  };
  const auto good = csv("good.csv", {16, 32, 64, 128}, false);
  const auto r = run("fit-scaling " + good + " --out " + (dir_ / "fit").string());
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_NEAR(j["alpha_C"].get<double>(), 0.2, 1e-6);
  EXPECT_TRUE(fs::exists(dir_ / "fit" / "scaling.csv"));
  EXPECT_EQ(run("fit-scaling " + csv("three.csv", {16, 32, 64}, false)).code, 2);
  EXPECT_EQ(run("fit-scaling " + csv("edge.csv", {16, 32, 64, 128}, true)).code, 4);
  EXPECT_EQ(run("fit-scaling " + (dir_ / "nothing.csv").string()).code, 2);
}

TEST_F(Cli, CorrelateWritesTable) {
  const auto cfg = write("c.json", R"({"params": {"J":1,"B":1,"alpha":0,"s":1,"Nx":32,"Ntau":128},
    "plan": {"burn_in_sweeps": 500, "n_samples": 2000}, "master_seed": 3, "r_min": 2})");
  const auto r = run("correlate --config " + cfg + " --out " + (dir_ / "c").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(dir_ / "c" / "correlation.csv"));
  const auto csv = read_text_file(dir_ / "c" / "correlation.csv");
  EXPECT_EQ(csv.substr(0, 9), "r,C,Cerr\n");
  const auto rec = nlohmann::json::parse(read_text_file(dir_ / "c" / "correlation.json"));
  EXPECT_TRUE(rec.contains("b"));
  EXPECT_TRUE(rec.contains("version"));
}

TEST_F(Cli, CorrelateDegenerateFitIsNumericalFailure) {
  // A 16-site ring gives chord distances 2..5; with the offset free the
  // best fit runs off to b -> 0 and the fit does not converge.
  const auto cfg = write("c.json", R"({"params": {"J":1,"B":1,"alpha":0,"s":1,"Nx":16,"Ntau":64},
    "plan": {"burn_in_sweeps": 500, "n_samples": 400}, "master_seed": 3, "r_min": 2})");
  const auto r = run("correlate --config " + cfg + " --out " + (dir_ / "c").string());
  EXPECT_EQ(r.code, 4) << r.out;
  EXPECT_TRUE(fs::exists(dir_ / "c" / "correlation.csv"));
}
