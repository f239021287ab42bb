#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "json.hpp"
#include "tempdir.hpp"

namespace planlm {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "planlm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

constexpr const char* kTinyConfig =
    "n_val = 4\nn_test = 4\nencoder_dim = 16\nk = 4\nkmeans_restarts = 2\n"
    "planner_layers = 1\nplanner_heads = 2\nplanner_max_epochs = 2\nplanner_steps_per_epoch = 5\n"
    "lm_dim = 16\nlm_layers = 2\nlm_heads = 2\nlm_context = 16\n"
    "pretrain_steps = 20\npretrain_batch = 8\nfinetune_steps = 10\nfinetune_batch = 8\nfinetune_eval_every = 5\n"
    "lengths = 8\neval_articles = 4\nuncond_samples = 2\nuncond_tokens = 8\n"
    "hmm_states = 3\nhmm_max_iters = 5\nscan_articles = 2\n";

TEST(Cli, HelpExitsZero) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("finetune"), std::string::npos);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"no-such-command"}).code, 1);
  const auto r = run({"config", "--set", "bogus_key=1"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("bogus_key"), std::string::npos);
  EXPECT_EQ(run({"config", "--regime", "psychic"}).code, 1);
}

TEST(Cli, MissingUpstreamArtifactExitsTwo) {
  testing::TempDir dir("cli_missing");
  const auto r = run({"--out-dir", (dir / "run").string(), "cluster"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("embed"), std::string::npos) << r.err;
}

TEST(Cli, ConfigPrintsDigestWithoutSelectors) {
  const auto a = run({"config", "--regime", "fixed"});
  const auto b = run({"config", "--regime", "oracle"});
  ASSERT_EQ(a.code, 0);
  const auto digest = [](const std::string& s) { return s.substr(s.find("# digest")); };
  EXPECT_EQ(digest(a.out), digest(b.out));
  EXPECT_NE(a.out.find("regime = fixed"), std::string::npos);
}

TEST(Cli, TinyPipelineRunsEndToEnd) {
  testing::TempDir dir("cli_pipeline");
  std::ofstream(dir / "tiny.cfg") << kTinyConfig;
  const std::string corpus = (dir / "corpus.jsonl").string();
  ASSERT_EQ(run({"synth", "--output", corpus, "--articles", "40", "--sentences", "6"}).code, 0);
  const std::vector<std::string> common = {"--config", (dir / "tiny.cfg").string(), "--out-dir",
                                           (dir / "run").string(), "--log-level", "off"};
  auto step = [&](std::vector<std::string> args) {
    args.insert(args.begin(), common.begin(), common.end());
    return run(args);
  };
  for (std::vector<std::string> s : std::vector<std::vector<std::string>>{
           {"ingest", "--input", corpus},
           {"embed"},
           {"cluster"},
           {"actions"},
           {"pretrain-lm"},
           {"train-planner"},
           {"finetune", "--regime", "predicted_pa"},
           {"generate", "--regime", "predicted_pa"}}) {
    const auto r = step(s);
    ASSERT_EQ(r.code, 0) << s[0] << ": " << r.err;
  }
  const auto ev = step({"evaluate", "--regime", "predicted_pa"});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto report = nlohmann::json::parse(ev.out);
  EXPECT_EQ(report.at("regime"), "predicted_pa");
  EXPECT_GT(report.at("ppl").get<double>(), 1.0);
  EXPECT_TRUE(fs::exists(dir / "run" / "models" / "planner.plmc"));

  // Evaluating a regime that was never finetuned names the missing producer.
  const auto missing = step({"evaluate", "--regime", "fixed"});
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("finetune"), std::string::npos) << missing.err;

  // Changing a digest-relevant key invalidates upstream artifacts.
  const auto drift = step({"--set", "k=3", "actions"});
  EXPECT_NE(drift.code, 0);
}

}  // namespace
}  // namespace planlm
