// Copyright 2026 The memedial Authors
// SPDX-License-Identifier: Apache-2.0

// memedial: corpus generation, training, evaluation and chat.
//
//   memedial gen-corpus --out data --seed 11
//   memedial train --task 2 --data data --out ret.ckpt
//   memedial eval --task 2 --ckpt ret.ckpt --split valid_seen --report ret.json
//   memedial chat --ckpt-gen gen.ckpt --ckpt-ret ret.ckpt --ckpt-emo emo.ckpt
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "memedial/pipeline.hpp"

namespace {

using namespace memedial;

struct TrainFlags {
  int task = 0;
  std::string config;
  std::string data;
  std::string out;
  std::string log;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  bool no_ef = false;
  bool no_edp = false;
};

int cmd_gen_corpus(const std::string& out, const GenCorpusOptions& options) {
  const CorpusPaths paths = gen_corpus(out, options);
  std::cout << "wrote " << paths.corpus.string() << ", " << paths.catalog.string() << ", "
            << paths.emotions.string() << ", " << paths.split.string() << '\n';
  return 0;
}

int cmd_train(const TrainFlags& f) {
  RunConfig config = f.config.empty() ? RunConfig{} : RunConfig::load(f.config);
  config.task = f.task;
  if (!f.data.empty()) config.paths = CorpusPaths::in(f.data);
  if (f.epochs) config.epochs = *f.epochs;
  if (f.seed) config.seed = *f.seed;
  if (f.lr) config.lr = *f.lr;
  if (f.batch_size) config.batch_size = *f.batch_size;
  if (f.no_ef) config.use_ef = false;
  if (f.no_edp) config.use_edp = false;
  config.validate();
  config.check_inputs();

  const std::string log_path = f.log.empty() ? f.out + ".loss.csv" : f.log;
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot write " + log_path);
  const TrainSummary s = train_run(config, f.out, &log);
  std::cout << s.line() << '\n';
  return 0;
}

int cmd_eval(const EvalRequest& request, const std::string& report_path) {
  const MetricsReport report = eval_run(request);
  if (report_path.empty()) {
    std::cout << report.to_json().dump(2) << '\n';
  } else {
    write_report(report_path, report);
    std::cout << "wrote " << report_path << '\n';
  }
  return 0;
}

int cmd_chat(const std::string& gen, const std::string& ret, const std::string& emo) {
  ChatSession session(load_model(gen), load_model(ret), load_model(emo));
  run_chat(session, std::cin, std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meme-incorporated dialogue: response generation, meme retrieval and meme emotion classification"};
  app.require_subcommand(1);

  GenCorpusOptions gen;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "Generate a synthetic corpus and its seen/unseen split");
  gen_cmd->add_option("--out", gen_out, "Output directory")->required();
  gen_cmd->add_option("--n-dialogues", gen.generator.n_dialogues, "Number of dialogues")->capture_default_str();
  gen_cmd->add_option("--n-memes", gen.generator.n_memes, "Catalog size")->capture_default_str();
  gen_cmd->add_option("--n-emotions", gen.generator.n_emotions, "Number of emotion classes")->capture_default_str();
  gen_cmd->add_option("--n-unseen", gen.n_unseen, "Memes held out for the unseen split")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Generator and split seed")->capture_default_str();

  TrainFlags train;
  auto* train_cmd = app.add_subcommand("train", "Train a task model");
  train_cmd->add_option("--task", train.task, "1 generation, 2 retrieval, 3 emotion")->required()->check(CLI::Range(1, 3));
  train_cmd->add_option("--config", train.config, "JSON run config");
  train_cmd->add_option("--data", train.data, "Directory written by gen-corpus (overrides config paths)");
  train_cmd->add_option("--out", train.out, "Checkpoint path")->required();
  train_cmd->add_option("--log", train.log, "Loss log CSV (default: <out>.loss.csv)");
  train_cmd->add_option("--epochs", train.epochs, "Override epochs");
  train_cmd->add_option("--seed", train.seed, "Override seed");
  train_cmd->add_option("--lr", train.lr, "Override learning rate");
  train_cmd->add_option("--batch-size", train.batch_size, "Override batch size");
  train_cmd->add_flag("--no-ef", train.no_ef, "Task 3: drop emotion flow");
  train_cmd->add_flag("--no-edp", train.no_edp, "Task 3: drop emotion description prediction");

  EvalRequest eval;
  int eval_task = 0;
  std::string eval_data, eval_report;
  std::uint64_t eval_seed = 0;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  eval_cmd->add_option("--task", eval_task, "Task the checkpoint was trained for")->required()->check(CLI::Range(1, 3));
  eval_cmd->add_option("--ckpt", eval.checkpoint, "Checkpoint path")->required();
  eval_cmd->add_option("--split", eval.split, "train, valid_seen or valid_unseen")
      ->check(CLI::IsMember({"train", "valid_seen", "valid_unseen"}))
      ->capture_default_str();
  eval_cmd->add_option("--data", eval_data, "Corpus directory (default: the one used for training)");
  eval_cmd->add_option("--report", eval_report, "Write the report here instead of stdout");
  auto* eval_seed_opt = eval_cmd->add_option("--eval-seed", eval_seed, "Seed for candidate sampling");

  std::string ckpt_gen, ckpt_ret, ckpt_emo;
  auto* chat_cmd = app.add_subcommand("chat", "Interactive chat; /quit or end of input exits");
  chat_cmd->add_option("--ckpt-gen", ckpt_gen, "Task 1 checkpoint")->required();
  chat_cmd->add_option("--ckpt-ret", ckpt_ret, "Task 2 checkpoint")->required();
  chat_cmd->add_option("--ckpt-emo", ckpt_emo, "Task 3 checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen_cmd) return cmd_gen_corpus(gen_out, gen);
    if (*train_cmd) return cmd_train(train);
    if (*eval_cmd) {
      eval.task = eval_task;
      if (!eval_data.empty()) eval.paths = CorpusPaths::in(eval_data);
      if (*eval_seed_opt) eval.eval_seed = eval_seed;
      return cmd_eval(eval, eval_report);
    }
    if (*chat_cmd) return cmd_chat(ckpt_gen, ckpt_ret, ckpt_emo);
  } catch (const memedial::Error& e) {
    std::cerr << "memedial: " << e.what() << '\n';
    return memedial::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "memedial: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
