#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gradpaint/experiments.hpp"

namespace fs = std::filesystem;
namespace gp = gradpaint;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("gradpaint_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  CliResult run(const std::string& args) const {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = std::string(GRADPAINT_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, BadFlagsPrintUsageAndExitTwo) {
  for (const std::string args : {"", "--bogus", "inpaint --method", "inpaint --method repaint", "eval",
                                 "make-masks --kind huge", "inpaint --steps 1", "sample --height 0"}) {
    const CliResult r = run(args);
    EXPECT_EQ(r.code, 2) << args << "\n" << r.err;
    EXPECT_NE(r.err.find("Usage"), std::string::npos) << args;
  }
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, RuntimeFailuresExitOne) {
  std::ofstream(path("bad.json")) << "{\"version\": 1, \"surprise\": 3}";
  CliResult r = run("eval --config " + path("bad.json"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error: "), std::string::npos);
  std::ofstream(path("bad.pgm")) << "P2\n1 1\n255\n";
  r = run("inpaint --image " + path("bad.pgm") + " -o " + path("x"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("at byte 0"), std::string::npos) << r.err;
  r = run("inpaint --model " + path("missing") + " -o " + path("x"));
  EXPECT_NE(r.code, 0);
}

TEST_F(Cli, ZeroLearningRateMatchesCombineImageByteForByte) {
  const std::string common = "--seed 7 inpaint --steps 30 --height 8 --width 8 --mask-kind thick";
  ASSERT_EQ(run(common + " --method gradpaint --lr 0 -o " + path("gp")).code, 0);
  ASSERT_EQ(run(common + " --method combine-image -o " + path("ci")).code, 0);
  EXPECT_EQ(slurp(path("gp.pgm")), slurp(path("ci.pgm")));
  EXPECT_EQ(slurp(path("gp.gpt1")), slurp(path("ci.gpt1")));
  EXPECT_FALSE(slurp(path("gp.pgm")).empty());
  ASSERT_EQ(run(common + " --method gradpaint --lr 0.3 -o " + path("gp3")).code, 0);
  EXPECT_NE(slurp(path("gp3.gpt1")), slurp(path("ci.gpt1")));
}

TEST_F(Cli, InpaintFromFilesWithTraceAndSnapshots) {
  ASSERT_EQ(run("--seed 3 sample -n 1 --steps 20 --height 8 --width 8 -o " + path("samples")).code, 0);
  ASSERT_EQ(run("--seed 3 make-masks --kind thick -n 1 --height 8 --width 8 -o " + path("masks")).code, 0);
  fs::path image, mask;
  for (const auto& e : fs::directory_iterator(dir_ / "samples")) {
    if (e.path().extension() == ".pgm") image = e.path();
  }
  for (const auto& e : fs::directory_iterator(dir_ / "masks")) {
    if (e.path().extension() == ".pgm") mask = e.path();
  }
  ASSERT_FALSE(image.empty());
  ASSERT_FALSE(mask.empty());
  const CliResult r = run("--seed 1 inpaint --steps 20 --height 8 --width 8 --method gradpaint --image " + image.string() +
                    " --mask " + mask.string() + " -o " + path("out") + " --trace " + path("trace.csv") +
                    " --snapshot-every 5 --snapshot-dir " + path("snaps"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("nll_prior="), std::string::npos);
  const std::string trace = slurp(path("trace.csv"));
  EXPECT_EQ(std::count(trace.begin(), trace.end(), '\n'), 21);
  EXPECT_EQ(std::distance(fs::directory_iterator(dir_ / "snaps"), fs::directory_iterator{}) > 0, true);
}

TEST_F(Cli, BernoulliMasksCoverEightyPercent) {
  const CliResult r = run("--seed 5 make-masks --kind bernoulli --p 0.8 --n 100 --height 32 --width 32 -o " + path("m"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto at = r.out.find("mean_coverage=");
  ASSERT_NE(at, std::string::npos);
  EXPECT_NEAR(std::stod(r.out.substr(at + 14)), 0.8, 0.02);
  EXPECT_TRUE(fs::exists(dir_ / "m" / "coverage.csv"));
}

TEST_F(Cli, EvalWithZeroRunsWritesHeaderOnly) {
  gp::ExperimentConfig cfg;
  cfg.runs = 0;
  cfg.output_dir = path("eval");
  std::ofstream(path("cfg.json")) << gp::serialize_config(cfg);
  const CliResult r = run("eval --config " + path("cfg.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("eval/eval.csv")), "method,mask_kind,index,seed,nll_prior,seam_energy,masked_rmse\n");
}

TEST_F(Cli, StudiesAreReproducibleFromConfigAndSeed) {
  gp::ExperimentConfig cfg;
  cfg.task.height = cfg.task.width = 8;
  cfg.guidance.steps = 20;
  cfg.runs = 3;
  cfg.output_dir = path("a");
  std::ofstream(path("cfg.json")) << gp::serialize_config(cfg);
  ASSERT_EQ(run("--seed 9 eval --config " + path("cfg.json")).code, 0);
  ASSERT_EQ(run("--seed 9 eval --config " + path("cfg.json") + " -o " + path("b") + " --threads 2").code, 0);
  EXPECT_EQ(slurp(path("a/eval.csv")), slurp(path("b/eval.csv")));
  EXPECT_EQ(slurp(path("a/summary.csv")), slurp(path("b/summary.csv")));
  ASSERT_EQ(run("--seed 9 sweep --config " + path("cfg.json") + " -o " + path("s") + " --fractions 0,0.5,1").code, 0);
  const std::string sweep = slurp(path("s/sweep.csv"));
  EXPECT_EQ(std::count(sweep.begin(), sweep.end(), '\n'), 4);
  ASSERT_EQ(run("--seed 9 diversity --config " + path("cfg.json") + " -o " + path("d") +
                " --coverages 0.25,0.5 --samples 3")
                .code,
            0);
  const std::string div = slurp(path("d/diversity.csv"));
  EXPECT_EQ(std::count(div.begin(), div.end(), '\n'), 1 + 2 * 3);  // one row per method and coverage
}

TEST_F(Cli, TrainDenoiserWritesModelAndLoss) {
  const CliResult r = run("--seed 2 train-denoiser --height 8 --width 8 --steps 20 --iters 5 --hidden 8 --validation 10 -o " +
                    path("model"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "model" / "manifest.json"));
  const std::string loss = slurp(path("model/loss.csv"));
  EXPECT_EQ(std::count(loss.begin(), loss.end(), '\n'), 6);
  EXPECT_NE(r.out.find("validation_loss="), std::string::npos);
  const CliResult inp = run("--seed 2 inpaint --height 8 --width 8 --steps 20 --model " + path("model") + " -o " + path("o"));
  EXPECT_EQ(inp.code, 0) << inp.err;
}
