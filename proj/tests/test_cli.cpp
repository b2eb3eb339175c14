#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>

#include "mcaol/io.hpp"
#include "mcaol/metrics.hpp"

using namespace mcaol;

namespace {

const fs::path& work() {
  static const fs::path p = [] {
    auto d = fs::temp_directory_path() / "mcaol_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

int run(const std::string& args) {
  const std::string cmd = std::string(MCAOL_CLI_PATH) + " " + args + " > " + (work() / "last.log").string() + " 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
  const auto b = read_bytes(p);
  return std::string(b.begin(), b.end());
}

std::string sweep_config() {
  const auto p = work() / "sweep.json";
  write_json(p, nlohmann::json::parse(R"({
    "preset": "toy32", "replicates": 2, "seed": 5,
    "methods": [{"name": "mcaol", "grid": [1.0]}, {"name": "tv", "log_grid": [1e-4, 1e-2, 2]}, {"name": "none"}],
    "recon": {"n_outer": 2, "inner_iterations": 5, "init_iterations": 10, "baseline_iterations": 10},
    "training": {"count": 2, "max_outer": 3, "filter_side": 3, "filter_count": 9}
  })"));
  return p.string();
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("phantom --bogus-flag 3 --out " + (work() / "x").string()), 1);
  EXPECT_EQ(run("phantom"), 1);
  EXPECT_EQ(run("reconstruct --prior mcaol --sino a --out b"), 1);
  EXPECT_EQ(run("reconstruct --prior bm3d --sino a --out b"), 1);
  EXPECT_EQ(run("--help"), 0);
}

TEST(Cli, DataErrorsExitTwo) {
  const auto bad = work() / "bad.json";
  std::ofstream(bad) << "{ \"methods\": [";
  EXPECT_EQ(run("sweep --config " + bad.string() + " --out " + (work() / "bad_out").string()), 2);
  EXPECT_EQ(run("phantom --preset nowhere --out " + (work() / "p").string()), 2);
  EXPECT_EQ(run("metrics --gt " + (work() / "missing").string() + " --recons " + work().string()), 2);
}

TEST(Cli, PhantomWritesPairAndManifest) {
  const auto out = work() / "gt";
  ASSERT_EQ(run("phantom --preset toy32 --out " + out.string()), 0);
  for (const char* f : {"low.raw", "low.json", "high.raw", "high.json", "manifest.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const auto low = load_image(out / "low");
  EXPECT_EQ(low.width(), 32u);
  EXPECT_EQ(low.pixel_size(), 10.0);
  const auto man = read_json(out / "manifest.json");
  EXPECT_EQ(man.at("preset"), "toy32");
  EXPECT_TRUE(man.contains("git_describe"));
}

TEST(Cli, TvWithZeroBetaMatchesNoPrior) {
  const auto gt = work() / "gt2", sino = work() / "sino";
  ASSERT_EQ(run("phantom --preset toy32 --out " + gt.string()), 0);
  ASSERT_EQ(run("simulate --preset toy32 --replicates 1 --seed 3 --gt " + gt.string() + " --out " + sino.string()),
            0);
  ASSERT_TRUE(fs::exists(sino / "low_r000.raw"));
  const std::string common = " --sino " + sino.string() + " --baseline-iter 60";
  ASSERT_EQ(run("reconstruct --prior tv --beta 0 --out " + (work() / "tv").string() + common), 0);
  ASSERT_EQ(run("reconstruct --prior none --out " + (work() / "none").string() + common), 0);
  for (const char* ch : {"low_r000", "high_r000"}) {
    const auto a = load_image(work() / "tv" / ch), b = load_image(work() / "none" / ch);
    EXPECT_LE(nrmse(a.values(), b.values()), 1e-6);
  }
  EXPECT_TRUE(fs::exists(work() / "tv" / "manifest_r000.json"));

  ASSERT_EQ(run("metrics --gt " + gt.string() + " --recons " + (work() / "none").string() + " --out " +
                (work() / "m.json").string()),
            0);
  const auto m = read_json(work() / "m.json");
  EXPECT_TRUE(m.at("low").at("std").is_null());
  EXPECT_GT(m.at("low").at("absbias").get<double>(), 0.0);
}

TEST(Cli, TrainAndLearnedReconstruct) {
  const auto banks = work() / "banks", sino = work() / "sino3", gt = work() / "gt3";
  ASSERT_EQ(run("train --mode mcaol --preset toy32 --count 2 --max-outer 3 --filter-side 3 --filter-count 9 --out " +
                banks.string()),
            0);
  ASSERT_TRUE(fs::exists(banks / "mcaol_low.bank.raw"));
  ASSERT_EQ(run("phantom --preset toy32 --out " + gt.string()), 0);
  ASSERT_EQ(run("simulate --preset toy32 --replicates 1 --gt " + gt.string() + " --out " + sino.string()), 0);
  ASSERT_EQ(run("reconstruct --prior mcaol --n-outer 2 --inner-iter 5 --init-iter 10 --banks " + banks.string() +
                " --sino " + sino.string() + " --out " + (work() / "mc").string()),
            0);
  EXPECT_TRUE(fs::exists(work() / "mc" / "objective_r000.csv"));
  EXPECT_TRUE(load_image(work() / "mc" / "high_r000").nonnegative());
}

TEST(Cli, SweepIsByteDeterministic) {
  const auto cfg = sweep_config();
  const auto a = work() / "sw_a", b = work() / "sw_b";
  ASSERT_EQ(run("sweep --config " + cfg + " --out " + a.string()), 0);
  ASSERT_EQ(run("sweep --config " + cfg + " --workers 2 --out " + b.string()), 0);
  for (const char* f : {"curves_low.csv", "curves_high.csv"}) {
    const auto ca = slurp(a / f);
    EXPECT_EQ(ca, slurp(b / f)) << f;
    EXPECT_EQ(ca.rfind("method,param,std,absbias\n", 0), 0u);
  }
}
