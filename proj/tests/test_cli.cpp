#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "odenet/config.hpp"

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("odenet_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ODENET_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_config(const fs::path& dir, const std::string& body) {
  const fs::path p = dir / "run.cfg";
  std::ofstream(p) << body;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Cli, TightnessSucceeds) {
  const fs::path dir = scratch("tight");
  EXPECT_EQ(run_cli("tightness --out " + dir.string()), 0);
  const std::string csv = slurp(dir / "tightness.csv");
  EXPECT_NE(csv.find("index_residual_interp,1000,"), std::string::npos);
}

TEST(Cli, ConfigErrorsExitWithTwo) {
  const fs::path dir = scratch("bad");
  EXPECT_EQ(run_cli("study --config " + write_config(dir, "depth = 4\n").string()), 2);
  EXPECT_EQ(run_cli("study --config " + (dir / "missing.cfg").string()), 2);
  EXPECT_EQ(run_cli("study"), 2);
  EXPECT_EQ(run_cli("bogus"), 2);
  EXPECT_EQ(run_cli("study --config " + write_config(dir, "experiment = toy_train\n").string()), 2);
  EXPECT_EQ(run_cli("study --config " + write_config(dir, "seed = 1\n").string() + " --depths 8,4"), 2);
}

TEST(Cli, AllDepthsDivergedExitsWithThree) {
  const fs::path dir = scratch("diverge");
  const fs::path cfg = write_config(dir,
                                    "experiment = euler_adjoint\nfamily = linear\nprofile_scale = 1e200\n"
                                    "depths = 8, 16\noutput_dir = " +
                                        (dir / "out").string() + "\n");
  EXPECT_EQ(run_cli("study --config " + cfg.string()), 3);
}

TEST(Cli, AssumptionViolationExitsWithFour) {
  const fs::path dir = scratch("assume");
  const fs::path cfg = write_config(dir,
                                    "experiment = linear_flow\ninit_scale = 2\ndepths = 8\nreference_depth = 0\n"
                                    "output_dir = " +
                                        (dir / "out").string() + "\n");
  EXPECT_EQ(run_cli("linflow --config " + cfg.string()), 4);
}

TEST(Cli, StudyIsDeterministicAndOverridable) {
  const fs::path dir = scratch("study");
  const fs::path cfg = write_config(dir, "experiment = heun_adjoint\ndepths = 8, 16, 32\nseed = 3\n");
  ASSERT_EQ(run_cli("study --config " + cfg.string() + " --out " + (dir / "a").string()), 0);
  ASSERT_EQ(run_cli("study --config " + cfg.string() + " --out " + (dir / "b").string()), 0);
  ASSERT_EQ(run_cli("study --config " + cfg.string() + " --out " + (dir / "c").string() + " --seed 4 --depths 8,16"),
            0);
  EXPECT_EQ(slurp(dir / "a" / "study.csv"), slurp(dir / "b" / "study.csv"));
  EXPECT_EQ(slurp(dir / "a" / "slopes.csv"), slurp(dir / "b" / "slopes.csv"));
  const std::string c = slurp(dir / "c" / "study.csv");
  EXPECT_EQ(c.find("32,"), std::string::npos);
  EXPECT_NE(c.substr(0, 60), slurp(dir / "a" / "study.csv").substr(0, 60));
}

TEST(Cli, TrainAndLinflowRunSmallConfigs) {
  const fs::path dir = scratch("small");
  const fs::path train = write_config(dir, "depths = 4, 8\niterations = 20\ntrain_points = 4\ngradient = adjoint_heun\n");
  EXPECT_EQ(run_cli("train --config " + train.string() + " --out " + (dir / "train").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "train" / "trajectories.csv"));
  const fs::path lin =
      write_config(dir, "experiment = linear_flow\ndepths = 4, 8\nreference_depth = 16\nt_end = 1\nsnapshots = 3\n");
  EXPECT_EQ(run_cli("linflow --config " + lin.string() + " --out " + (dir / "lin").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "lin" / "limitmap.csv"));
}

TEST(Configs, SamplesParse) {
  std::size_t count = 0;
  for (const auto& entry : fs::directory_iterator(fs::path(ODENET_SOURCE_DIR) / "configs")) {
    if (entry.path().extension() != ".cfg") continue;
    EXPECT_NO_THROW(odenet::load_config(entry.path().string())) << entry.path();
    ++count;
  }
  EXPECT_GE(count, 6u);
}
