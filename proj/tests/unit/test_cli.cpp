#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "lapnet/csv.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(LAPNET_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lapnet_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Cli, HelpAndParseErrors) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("--no-such-flag gen-data"), 1);
  EXPECT_EQ(run("--config /nonexistent.json gen-data"), 1);
}

TEST(Cli, BadConfigIsExitOne) {
  const fs::path dir = scratch("badcfg");
  std::ofstream(dir / "bad.json") << R"({"task": "sine_regression", "unknown_section": {}})";
  EXPECT_EQ(run("--config " + (dir / "bad.json").string() + " --out-dir " + dir.string() +
                " gen-data"),
            1);
  std::ofstream(dir / "broken.json") << "{ not json";
  EXPECT_EQ(run("--config " + (dir / "broken.json").string() + " gen-data"), 1);
}

TEST(Cli, MissingCheckpointIsIoError) {
  const fs::path dir = scratch("io");
  EXPECT_EQ(run("--out-dir " + dir.string() + " laplace --checkpoint " +
                (dir / "missing.json").string()),
            3);
}

TEST(Cli, GenDataWritesSplits) {
  const fs::path dir = scratch("gen");
  ASSERT_EQ(run("--task sine_regression --out-dir " + dir.string() + " gen-data"), 0);
  for (const char* f : {"train.csv", "valid.csv", "test.csv"}) {
    ASSERT_TRUE(fs::exists(dir / f)) << f;
    const auto t = lapnet::read_csv(dir / f);
    EXPECT_EQ(t.header, (std::vector<std::string>{"x0", "y0"}));
    EXPECT_FALSE(t.rows.empty());
  }
}

TEST(Cli, Figure1LaplaceFromCheckpoint) {
  const fs::path dir = scratch("fig1");
  const std::string cfg = std::string(LAPNET_CONFIG_DIR) + "/figure1.json";
  const std::string ckpt = std::string(LAPNET_CONFIG_DIR) + "/figure1_checkpoint.json";
  ASSERT_EQ(run("--config " + cfg + " --out-dir " + dir.string() + " laplace --checkpoint " + ckpt),
            0);
  EXPECT_TRUE(fs::exists(dir / "laplace.json"));
  EXPECT_TRUE(fs::exists(dir / "ellipse.csv"));
  const auto e = lapnet::read_csv(dir / "ellipse.csv");
  EXPECT_NEAR(e.numeric("axis_major")(0), 2.2360680, 1e-5);
}

TEST(Cli, PlotDataWithoutInputIsNoOp) {
  const fs::path dir = scratch("plot");
  EXPECT_EQ(run("--out-dir " + dir.string() + " plot-data"), 0);
  EXPECT_TRUE(fs::is_empty(dir));
}
