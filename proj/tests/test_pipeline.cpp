// Copyright 2026 The memedial Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "memedial/pipeline.hpp"

namespace memedial {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "memedial_pipeline_test";
    fs::remove_all(root_);
    GenCorpusOptions options;
    options.generator.n_dialogues = 80;
    options.seed = 4;
    paths_ = gen_corpus(root_ / "data", options);
  }

  static RunConfig small_config(int task) {
    RunConfig c;
    c.task = task;
    c.paths = paths_;
    c.d_model = 16;
    c.d_ff = 32;
    c.n_heads = 2;
    c.epochs = 1;
    c.batch_size = 16;
    c.seed = 9;
    c.beam_size = 2;
    c.policy = {.max_context_tokens = 32, .max_response_tokens = 16};
    return c;
  }

  static inline fs::path root_;
  static inline CorpusPaths paths_;
};

TEST(RunConfig, JsonRoundTripAndRejections) {
  RunConfig c;
  c.task = 3;
  c.use_ef = false;
  c.lr = 5e-4;
  c.paths = CorpusPaths::in("some/dir");
  c.task2.margin = 0.3;
  const RunConfig back = RunConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());

  EXPECT_THROW(RunConfig::from_json({{"tsak", 2}}), SpecError);
  EXPECT_THROW(RunConfig::from_json({{"task", 4}}), SpecError);
  EXPECT_THROW(RunConfig::from_json({{"lr", "fast"}}), SpecError);
  EXPECT_THROW(RunConfig::from_json({{"task2", {{"margin", 0.0}}}}), SpecError);
  EXPECT_THROW(RunConfig::from_json({{"model", {{"width", 3}}}}), SpecError);
  EXPECT_EQ(RunConfig::from_json(nlohmann::json::object()).to_json(), RunConfig{}.to_json());
}

TEST_F(Pipeline, GenCorpusIsDeterministicAndReloads) {
  GenCorpusOptions options;
  options.generator.n_dialogues = 80;
  options.seed = 4;
  const CorpusPaths again = gen_corpus(root_ / "data_again", options);
  EXPECT_EQ(slurp(again.corpus), slurp(paths_.corpus));
  EXPECT_EQ(slurp(again.catalog), slurp(paths_.catalog));
  EXPECT_EQ(slurp(again.emotions), slurp(paths_.emotions));
  EXPECT_EQ(slurp(again.split), slurp(paths_.split));

  const DataBundle data = load_data(paths_);
  EXPECT_EQ(data.dialogues.size(), 80u);
  EXPECT_EQ(data.split.held_out_memes.size(), 20u);
  for (const auto& d : data.split.train) EXPECT_FALSE(d.references_any(data.split.held_out_memes));
}

TEST_F(Pipeline, UnwritableOutputIsIoError) {
  GenCorpusOptions options;
  options.generator.n_dialogues = 5;
  EXPECT_THROW(gen_corpus("/proc/memedial_cannot_write", options), IoError);
}

TEST_F(Pipeline, ZeroEpochsSavesTheInitialization) {
  RunConfig c = small_config(2);
  c.epochs = 0;
  const fs::path ckpt = root_ / "init.ckpt";
  const TrainSummary s = train_run(c, ckpt);
  EXPECT_EQ(s.steps, 0u);
  const LoadedModel m = load_model(ckpt);
  const DataBundle data = load_data(paths_);
  const Parameters init = init_parameters(c.model_config(data.vocab, data.emotions), c.seed);
  const auto a = m.params.all();
  const auto b = init.all();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
}

TEST_F(Pipeline, LossLogHasOneRowPerStep) {
  const RunConfig c = small_config(3);
  std::ostringstream log;
  const TrainSummary s = train_run(c, root_ / "emo.ckpt", &log);
  std::istringstream lines(log.str());
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "step,loss,lr");
  std::size_t rows = 0;
  while (std::getline(lines, line)) ++rows;
  EXPECT_EQ(rows, s.steps);
  EXPECT_GT(rows, 0u);
  EXPECT_NE(s.line().find("final_loss="), std::string::npos);
  EXPECT_NE(s.line().find("seed=9"), std::string::npos);
}

TEST_F(Pipeline, TrainEvalRepeatsByteIdenticallyAndLeavesInputsAlone) {
  for (int task : {1, 2, 3}) {
    std::string reports[2];
    for (int run = 0; run < 2; ++run) {
      const fs::path ckpt = root_ / ("det" + std::to_string(task) + "_" + std::to_string(run) + ".ckpt");
      train_run(small_config(task), ckpt);
      const std::string before = slurp(ckpt) + slurp(paths_.corpus) + slurp(paths_.split);
      const fs::path report = root_ / ("det" + std::to_string(task) + "_" + std::to_string(run) + ".json");
      write_report(report, eval_run({ckpt, "valid_seen", task, std::nullopt, std::nullopt}));
      EXPECT_EQ(slurp(ckpt) + slurp(paths_.corpus) + slurp(paths_.split), before);
      reports[run] = slurp(report);
    }
    EXPECT_EQ(reports[0], reports[1]) << "task " << task;
    const auto j = nlohmann::json::parse(reports[0]);
    EXPECT_EQ(j.at("task"), task);
    EXPECT_EQ(j.at("metadata").at("config").at("seed"), 9);
  }
}

TEST_F(Pipeline, EvalRejectsMismatchedInputs) {
  const fs::path ckpt = root_ / "mismatch.ckpt";
  RunConfig c = small_config(2);
  c.epochs = 0;
  train_run(c, ckpt);
  EXPECT_THROW(eval_run({ckpt, "valid_seen", 3, std::nullopt, std::nullopt}), VersionError);

  GenCorpusOptions other;
  other.generator.n_dialogues = 50;
  other.seed = 5;
  const CorpusPaths other_paths = gen_corpus(root_ / "other", other);
  EXPECT_THROW(eval_run({ckpt, "valid_seen", 2, other_paths, std::nullopt}), VersionError);
  EXPECT_THROW(eval_run({ckpt, "test", 2, std::nullopt, std::nullopt}), SpecError);

  std::ofstream(root_ / "garbage.ckpt") << "{}";
  EXPECT_THROW(load_model(root_ / "garbage.ckpt"), VersionError);
}

TEST_F(Pipeline, AblationConfigsRecordTheirFlags) {
  RunConfig c = small_config(3);
  c.epochs = 0;
  c.use_ef = false;
  c.use_edp = false;
  train_run(c, root_ / "base.ckpt");
  const MetricsReport r = eval_run({root_ / "base.ckpt", "valid_seen", 3, std::nullopt, std::nullopt});
  EXPECT_EQ(r.metadata.at("use_ef"), false);
  EXPECT_EQ(r.metadata.at("use_edp"), false);
  EXPECT_EQ(r.metrics.size(), 3u);
}

class Chat : public Pipeline {
 protected:
  static ChatSession session() {
    for (int task : {1, 2, 3}) {
      RunConfig c = small_config(task);
      c.epochs = 0;
      train_run(c, root_ / ("chat" + std::to_string(task) + ".ckpt"));
    }
    return ChatSession(load_model(root_ / "chat1.ckpt"), load_model(root_ / "chat2.ckpt"),
                       load_model(root_ / "chat3.ckpt"));
  }
};

TEST_F(Chat, BlankLinesRepromptAndQuitStops) {
  ChatSession s = session();
  std::istringstream in("\n   \nhello there\n/quit\nnever read\n");
  std::ostringstream out;
  run_chat(s, in, out);
  EXPECT_EQ(s.history().size(), 2u);
  const std::string text = out.str();
  EXPECT_EQ(text.rfind("> ", 0), 0u);
  EXPECT_NE(text.find("[meme "), std::string::npos);
}

TEST_F(Chat, EndOfInputExitsCleanly) {
  ChatSession s = session();
  std::istringstream in("");
  std::ostringstream out;
  EXPECT_NO_THROW(run_chat(s, in, out));
  EXPECT_TRUE(s.history().empty());
}

TEST_F(Chat, AttachedMemeMatchesOfflineRetrieval) {
  ChatSession s = session();
  const ChatReply r = s.respond("what a day");
  const LoadedModel ret = load_model(root_ / "chat2.ckpt");
  const auto context = std::span<const Turn>(s.history()).first(1);
  const auto offline =
      retrieve(ret.params, ret.vocab, ret.catalog, context, r.text, ret.catalog.entries(), ret.config.policy);
  EXPECT_EQ(r.meme_id, offline.top());
  EXPECT_EQ(s.history().back().meme_id, r.meme_id);
}

#ifdef MEMEDIAL_CLI
int run_cli(const std::string& args) {
  const int status = std::system((std::string(MEMEDIAL_CLI) + " " + args + " > /dev/null 2>&1").c_str());
  return WEXITSTATUS(status);
}

TEST_F(Pipeline, CliExitCodes) {
  const std::string data = (root_ / "data").string();
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("train --task 7 --out x"), 1);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  EXPECT_EQ(run_cli("train --task 2 --data /nonexistent --out x"), 2);
  const std::string ckpt = (root_ / "cli.ckpt").string();
  EXPECT_EQ(run_cli("train --task 2 --data " + data + " --epochs 0 --out " + ckpt), 0);
  EXPECT_TRUE(fs::exists(ckpt + ".loss.csv"));
  EXPECT_EQ(run_cli("eval --task 3 --ckpt " + ckpt), 2);
  EXPECT_EQ(run_cli("chat --ckpt-gen " + ckpt + " --ckpt-ret " + ckpt + " --ckpt-emo " + ckpt + " < /dev/null"), 2);
}
#endif

}  // namespace
}  // namespace memedial
