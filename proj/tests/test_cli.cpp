#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "equicaps/cli.hpp"
#include "equicaps/io.hpp"
#include "json.hpp"

using namespace equicaps;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

CliRun run(std::initializer_list<std::string> args) {
  std::vector<std::string> owned = {"equicaps"};
  owned.insert(owned.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : owned) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("equicaps-cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& leaf) const { return (dir_ / leaf).string(); }

  fs::path dir_;
};

}  // namespace

TEST(ConfigText, ParsesKeyValues) {
  const auto kv = parse_config_text("# header\nseed = 9\nlearning-rate=0.1  # inline\n\n");
  EXPECT_EQ(kv.at("seed"), "9");
  EXPECT_EQ(kv.at("learning_rate"), "0.1");
  EXPECT_THROW(parse_config_text("seed 9\n"), ConfigError);
  EXPECT_THROW(parse_config_text("seed = 1\nseed = 2\n"), ConfigError);
  EXPECT_THROW(parse_config_text("colour = red\n"), ConfigError);
}

TEST_F(Cli, VerifyRoutingWritesReport) {
  const CliRun r = run({"verify", "routing", "--trials", "30", "--out", path("v")});
  EXPECT_EQ(r.code, exit_code::kOk) << r.err;
  EXPECT_EQ(r.out.rfind("config {", 0), 0u);
  const auto doc = nlohmann::json::parse(read_file(path("v/verify_report.json")));
  EXPECT_EQ(doc["schema_version"], 1);
  EXPECT_TRUE(doc["all_as_expected"].get<bool>());
}

TEST_F(Cli, ZeroTrialsIsAPreconditionFailure) {
  const CliRun r = run({"verify", "routing", "--trials", "0", "--out", path("v")});
  EXPECT_EQ(r.code, exit_code::kPrecondition);
  EXPECT_NE(r.err.find("trials"), std::string::npos);
}

TEST_F(Cli, UnwritableOutputIsAPreconditionFailure) {
  write_file_atomic(path("file"), "x");
  const CliRun r = run({"verify", "routing", "--trials", "5", "--out", path("file/sub")});
  EXPECT_EQ(r.code, exit_code::kPrecondition);
}

TEST_F(Cli, NoAlignRecordsTheExpectedFailure) {
  const CliRun r = run({"verify", "aggregation", "--no-align", "--trials", "40", "--out", path("v")});
  EXPECT_EQ(r.code, exit_code::kOk) << r.out;
  const auto doc = nlohmann::json::parse(read_file(path("v/verify_report.json")));
  ASSERT_EQ(doc["reports"].size(), 1u);
  EXPECT_FALSE(doc["reports"][0]["passed"].get<bool>());
  EXPECT_TRUE(doc["reports"][0]["expected_fail"].get<bool>());
}

TEST_F(Cli, UnknownGroupAndBadNumbersAreRejected) {
  EXPECT_EQ(run({"verify", "routing", "--group", "so3", "--out", path("v")}).code, exit_code::kPrecondition);
  EXPECT_EQ(run({"verify", "routing", "--trials", "ten", "--out", path("v")}).code, exit_code::kPrecondition);
  EXPECT_EQ(run({"verify", "everything"}).code, exit_code::kPrecondition);
  EXPECT_EQ(run({}).code, exit_code::kPrecondition);
}

TEST_F(Cli, TrainZeroEpochsThenEvalPose) {
  const CliRun t = run({"train", "--epochs", "0", "--samples", "8", "--out", path("t")});
  ASSERT_EQ(t.code, exit_code::kOk) << t.err;
  EXPECT_NE(t.out.find("\"epochs\":0"), std::string::npos);
  const std::string csv = read_file(path("t/metrics.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,loss,holdout_accuracy");
  EXPECT_NE(csv.find("\n0,"), std::string::npos);

  const CliRun e = run({"eval-pose", "--snapshot", path("t/snapshot.bin"), "--samples", "8", "--quarter-turns-only",
                     "--out", path("e")});
  ASSERT_EQ(e.code, exit_code::kOk) << e.err;
  const auto doc = nlohmann::json::parse(read_file(path("e/pose_summary.json")));
  EXPECT_LE(doc["capsule"]["mean_error_deg"].get<double>(), 0.01);
  EXPECT_EQ(doc["capsule"]["samples"], 8);
  EXPECT_TRUE(fs::exists(path("e/pose_hist_naive.csv")));
}

TEST_F(Cli, EvalPoseErrors) {
  EXPECT_EQ(run({"eval-pose", "--snapshot", path("nothing.bin"), "--out", path("e")}).code, exit_code::kPrecondition);
  EXPECT_EQ(run({"eval-pose", "--out", path("e")}).code, exit_code::kPrecondition);
  ASSERT_EQ(run({"train", "--epochs", "0", "--samples", "4", "--out", path("t")}).code, exit_code::kOk);
  write_file_atomic(path("empty.txt"), "# no images\n");
  EXPECT_EQ(run({"eval-pose", "--snapshot", path("t/snapshot.bin"), "--dataset", path("empty.txt"), "--out",
                 path("e")}).code,
            exit_code::kPrecondition);
  EXPECT_EQ(run({"eval-pose", "--snapshot", path("t/snapshot.bin"), "--samples", "0", "--out", path("e")}).code,
            exit_code::kPrecondition);
}

TEST_F(Cli, EvalPoseReadsImageManifest) {
  ASSERT_EQ(run({"train", "--epochs", "0", "--samples", "4", "--out", path("t")}).code, exit_code::kOk);
  std::string img;
  for (int r = 0; r < 16; ++r) {
    for (int c = 0; c < 16; ++c) img += std::string(c ? "," : "") + ((r > 4 && r < 11 && c > 6 && c < 9) ? "1" : "0");
    img += "\n";
  }
  write_file_atomic(path("bar.csv"), img);
  write_file_atomic(path("list.txt"), "bar.csv, 1\n");
  const CliRun e = run({"eval-pose", "--snapshot", path("t/snapshot.bin"), "--dataset", path("list.txt"), "--out",
                     path("e")});
  EXPECT_EQ(e.code, exit_code::kOk) << e.err;
  const auto doc = nlohmann::json::parse(read_file(path("e/pose_summary.json")));
  EXPECT_EQ(doc["naive"]["classes"][1]["samples"], 1);
}

TEST_F(Cli, ConfigFileAndFlagPrecedence) {
  write_file_atomic(path("run.cfg"), "seed = 11\ntrials = 5\n");
  CliRun r = run({"verify", "routing", "--config", path("run.cfg"), "--out", path("v")});
  ASSERT_EQ(r.code, exit_code::kOk) << r.err;
  EXPECT_NE(r.out.find("\"seed\":11"), std::string::npos);
  EXPECT_NE(r.out.find("\"trials\":5"), std::string::npos);
  r = run({"verify", "routing", "--config", path("run.cfg"), "--seed", "12", "--out", path("v")});
  EXPECT_NE(r.out.find("\"seed\":12"), std::string::npos);
  write_file_atomic(path("bad.cfg"), "trials = many\n");
  EXPECT_EQ(run({"verify", "routing", "--config", path("bad.cfg"), "--out", path("v")}).code, exit_code::kPrecondition);
  EXPECT_EQ(run({"verify", "routing", "--config", path("absent.cfg")}).code, exit_code::kPrecondition);
}

TEST_F(Cli, EnvironmentSeedFallback) {
  ::setenv("EQUICAPS_SEED", "31", 1);
  const CliRun r = run({"demo-route"});
  ::unsetenv("EQUICAPS_SEED");
  EXPECT_EQ(r.code, exit_code::kOk);
  EXPECT_NE(r.out.find("\"seed\":31"), std::string::npos);
  EXPECT_NE(r.out.find("iteration 2"), std::string::npos);
}

TEST_F(Cli, RepeatedRunsAreByteIdentical) {
  ASSERT_EQ(run({"verify", "groupconv", "--trials", "10", "--out", path("a")}).code, exit_code::kOk);
  ASSERT_EQ(run({"verify", "groupconv", "--trials", "10", "--out", path("b")}).code, exit_code::kOk);
  EXPECT_EQ(read_file(path("a/verify_report.json")), read_file(path("b/verify_report.json")));
  const CliRun d1 = run({"demo-route", "--group", "so2xr2", "--seed", "4"});
  const CliRun d2 = run({"demo-route", "--group", "so2xr2", "--seed", "4"});
  EXPECT_EQ(d1.out, d2.out);
}

TEST_F(Cli, NonFiniteTrainingExitsWithThree) {
  write_file_atomic(path("hot.cfg"), "learning_rate = 1e308\n");
  const CliRun r = run({"train", "--config", path("hot.cfg"), "--epochs", "3", "--samples", "32", "--out", path("t")});
  EXPECT_EQ(r.code, exit_code::kNonFinite) << r.err;
}
