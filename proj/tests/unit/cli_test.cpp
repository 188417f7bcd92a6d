#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fer/cli.hpp"
#include "fer/rng.hpp"
#include "fer/weights_io.hpp"
#include "json.hpp"

namespace fer {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "fer");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    static int counter = 0;
    dir_ = fs::temp_directory_path() / ("fer_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(dir_);
    // 7 classes x (3 train + 1 val + 1 test) rows of random pixels.
    std::ofstream csv(dir_ / "fer.csv");
    csv << "emotion,pixels,Usage\n";
    Rng rng(1);
    for (const char* usage : {"Training", "Training", "Training", "PublicTest", "PrivateTest"})
      for (int c = 0; c < 7; ++c) {
        csv << c << ",";
        for (int i = 0; i < 2304; ++i) csv << (i ? " " : "") << rng.below(256);
        csv << "," << usage << "\n";
      }
    csv.close();
    save_weights(ModelGraph::build(Arch::kFiveLayer, 3), dir_ / "w.ferw");
    std::ofstream pgm(dir_ / "face.pgm");
    pgm << "P2\n48 48\n255\n";
    for (int i = 0; i < 2304; ++i) pgm << rng.below(256) << "\n";
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string p(const char* name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

TEST_F(CliTest, UsageErrorsExitOne) {
  EXPECT_EQ(run({"predict", "--bogus"}).code, kExitUsage);
  EXPECT_EQ(run({"no-such-command"}).code, kExitUsage);
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"--help"}).code, kExitOk);
}

TEST_F(CliTest, DataErrorsExitTwo) {
  EXPECT_EQ(run({"predict", "--weights", p("missing.ferw"), p("face.pgm")}).code, kExitData);
  std::ofstream(dir_ / "bad.cfg") << "dataset = " << p("fer.csv") << "\nfrobnicate = 1\n";
  EXPECT_EQ(run({"train", "--config", p("bad.cfg"), "--quiet"}).code, kExitData);
}

TEST_F(CliTest, PredictPrintsDistribution) {
  const CliRun r = run({"predict", "--weights", p("w.ferw"), p("face.pgm")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json j = json::parse(r.out);
  double sum = 0;
  for (double v : j["probabilities"]) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-6);
  EXPECT_TRUE(j["by_class"].contains(j["label"].get<std::string>()));
  const CliRun tta = run({"predict", "--weights", p("w.ferw"), p("face.pgm"), "--tta", "--seed", "4"});
  ASSERT_EQ(tta.code, kExitOk) << tta.err;
  EXPECT_EQ(tta.out, run({"predict", "--weights", p("w.ferw"), p("face.pgm"), "--tta", "--seed", "4"}).out);
}

TEST_F(CliTest, EvalIsDeterministicAndWritesErrors) {
  const std::vector<std::string> args{"eval", "--weights", p("w.ferw"), "--dataset", p("fer.csv"), "--errors", "2",
                                      "--out", p("errors.jsonl")};
  const CliRun a = run(args), b = run(args);
  ASSERT_EQ(a.code, kExitOk) << a.err;
  EXPECT_EQ(a.out, b.out);
  const json j = json::parse(a.out);
  EXPECT_EQ(j["total"], 7);
  EXPECT_TRUE(fs::exists(dir_ / "errors.jsonl"));
}

TEST_F(CliTest, DatasetStatsCountsSplits) {
  const CliRun r = run({"dataset-stats", "--dataset", p("fer.csv")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["train"]["total"], 21);
  EXPECT_EQ(j["all"]["total"], 35);
  EXPECT_EQ(j["all"]["Angry"], 5);
}

TEST_F(CliTest, ExplainWritesPng) {
  const CliRun r = run({"explain", "--weights", p("w.ferw"), p("face.pgm"), "--method", "saliency", "--out", p("h.png")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "h.png"));
  EXPECT_EQ(run({"explain", "--weights", p("w.ferw"), p("face.pgm"), "--method", "magic", "--out", p("h.png")}).code,
            kExitUsage);
}

TEST_F(CliTest, TrainOneEpochProducesLoadableWeights) {
  std::ofstream(dir_ / "t.cfg") << "dataset = " << p("fer.csv") << "\nmax_epochs = 1\nbatch_size = 8\n";
  const CliRun r = run({"train", "--config", p("t.cfg"), "-o", p("out.ferw"), "--quiet"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(json::parse(r.out)["epochs"], 1);
  EXPECT_EQ(load_weights(dir_ / "out.ferw").param_count(), 2438311u);
}

}  // namespace
}  // namespace fer
