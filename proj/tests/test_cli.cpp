#include <gtest/gtest.h>

#include <filesystem>

#include "support/cli.hpp"
#include "support/temp_dir.hpp"

namespace mmrec {
namespace {

using testing::read_file;
using testing::run_command;
using testing::TempDir;
using testing::write_file;

const std::string kCli = MMREC_CLI_PATH;

std::string with_config(const TempDir& dir, const std::string& args) {
  write_file(dir.file("config.json"), testing::tiny_cli_config(dir.str()));
  return kCli + " " + args + " --config " + dir.file("config.json");
}

TEST(Cli, SubcommandIsRequired) {
  EXPECT_EQ(run_command(kCli).exit_code, 2);
  EXPECT_EQ(run_command(kCli + " train").exit_code, 2);
}

TEST(Cli, SynthIsByteIdenticalAcrossRuns) {
  TempDir dir("cli_synth");
  ASSERT_EQ(run_command(with_config(dir, "synth")).exit_code, 0);
  const std::string first = read_file(dir.file("data/interactions.tsv"));
  std::filesystem::remove_all(dir.file("data"));
  ASSERT_EQ(run_command(with_config(dir, "synth")).exit_code, 0);
  EXPECT_FALSE(first.empty());
  EXPECT_EQ(read_file(dir.file("data/interactions.tsv")), first);
}

TEST(Cli, SeedFlagChangesTheData) {
  TempDir dir("cli_seed");
  ASSERT_EQ(run_command(with_config(dir, "synth --seed 3")).exit_code, 0);
  const std::string a = read_file(dir.file("data/interactions.tsv"));
  ASSERT_EQ(run_command(with_config(dir, "synth --seed 4")).exit_code, 0);
  EXPECT_NE(read_file(dir.file("data/interactions.tsv")), a);
}

TEST(Cli, EvaluateWithoutAModelIsAConfigError) {
  TempDir dir("cli_nomodel");
  ASSERT_EQ(run_command(with_config(dir, "synth")).exit_code, 0);
  const auto r = run_command(with_config(dir, "evaluate"));
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.output.find("missing checkpoint"), std::string::npos) << r.output;
}

TEST(Cli, PretrainWithoutDataIsAConfigError) {
  TempDir dir("cli_nodata");
  const auto r = run_command(with_config(dir, "pretrain"));
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.output.find("missing"), std::string::npos) << r.output;
}

TEST(Cli, BadConfigsExitWithTwo) {
  TempDir dir("cli_badcfg");
  write_file(dir.file("broken.json"), "{ not json");
  EXPECT_EQ(run_command(kCli + " synth --config " + dir.file("broken.json")).exit_code, 2);
  write_file(dir.file("unknown.json"), R"({"no_such_key": 1})");
  EXPECT_EQ(run_command(kCli + " synth --config " + dir.file("unknown.json")).exit_code, 2);
  EXPECT_EQ(run_command(kCli + " synth --config " + dir.file("absent.json")).exit_code, 2);
  EXPECT_EQ(run_command(with_config(dir, "synth --training.heads 0")).exit_code, 2);
  EXPECT_EQ(run_command(with_config(dir, "synth --dangling")).exit_code, 2);
}

TEST(Cli, DottedOverridesReachNestedBlocks) {
  TempDir dir("cli_override");
  ASSERT_EQ(run_command(with_config(dir, "synth --synth.n_users 7")).exit_code, 0);
  const std::string tsv = read_file(dir.file("data/interactions.tsv"));
  EXPECT_NE(tsv.find("u00006\t"), std::string::npos);
  EXPECT_EQ(tsv.find("u00007\t"), std::string::npos);
}

TEST(Cli, PipelineWritesEveryArtifact) {
  TempDir dir("cli_pipeline");
  const auto run = testing::run_cli_pipeline(kCli, dir.str());
  ASSERT_TRUE(run.ok) << run.log;
  for (const char* f : {"out/pretrained.um2r", "out/finetuned.um2r", "out/pretrain_loss.tsv", "out/valid_curve.tsv",
                        "out/metrics.tsv", "data/interactions.tsv"})
    EXPECT_TRUE(run.files.count(f)) << f;
  const std::string& metrics = run.files.at("out/metrics.tsv");
  EXPECT_EQ(metrics.rfind("metric\tvalue\nrecall@5\t", 0), 0u);
  EXPECT_NE(metrics.find("\nconfig\t{"), std::string::npos);
  EXPECT_EQ(run.files.at("out/pretrained.um2r").substr(0, 4), "UM2R");
}

TEST(Cli, RobustnessWritesOneReportPerMaskSetting) {
  TempDir dir("cli_robust");
  ASSERT_TRUE(testing::run_cli_pipeline(kCli, dir.str()).ok);
  const auto r = run_command("cd '" + dir.str() + "' && '" + kCli + "' robustness --config config.json");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  for (const char* m : {"text", "image"})
    for (const char* ratio : {"010", "030", "050", "100"})
      EXPECT_TRUE(std::filesystem::exists(dir.file(std::string("out/robustness_") + m + "_" + ratio + ".tsv")))
          << m << " " << ratio;
}

TEST(Cli, AblateRunsTheSelectedVariants) {
  TempDir dir("cli_ablate");
  ASSERT_EQ(run_command(with_config(dir, "synth")).exit_code, 0);
  const auto r = run_command(with_config(dir, R"(ablate --variants '["w/o CL","w/o MIX"]')"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const std::string summary = read_file(dir.file("out/ablation.tsv"));
  EXPECT_NE(summary.find("\nw/o CL\t"), std::string::npos);
  EXPECT_NE(summary.find("\nw/o MIX\t"), std::string::npos);
  EXPECT_EQ(summary.find("\nfull\t"), std::string::npos);
}

}  // namespace
}  // namespace mmrec
