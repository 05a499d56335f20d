// Copyright 2026 The memedial Authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration and the commands behind the CLI: corpus generation,
// training, evaluation and the chat loop.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "memedial/checkpoint.hpp"
#include "memedial/corpus.hpp"
#include "memedial/evaluation.hpp"
#include "memedial/model.hpp"
#include "memedial/tasks.hpp"
#include "memedial/textproc.hpp"

namespace memedial {

/// File names written by gen-corpus inside its output directory.
struct CorpusPaths {
  std::filesystem::path corpus;
  std::filesystem::path catalog;
  std::filesystem::path emotions;
  std::filesystem::path split;

  static CorpusPaths in(const std::filesystem::path& dir) {
    return {dir / "corpus.jsonl", dir / "catalog.json", dir / "emotions.json", dir / "split.json"};
  }
};

/// Everything a train or eval run depends on. Model width and depth are
/// overrides; vocab_size, n_emotions and max_positions follow from the data
/// and the truncation policy.
struct RunConfig {
  int task = 2;
  CorpusPaths paths;
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 32;
  int d_ff = 128;
  Task2TrainConfig task2;
  bool use_ef = true;
  bool use_edp = true;
  std::uint64_t seed = 0;
  int epochs = 5;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::int64_t warmup_steps = 200;
  TruncationPolicy policy{.max_context_tokens = 48, .max_response_tokens = 32};
  std::size_t beam_size = 5;
  std::uint64_t eval_seed = 0;

  void validate() const {
    if (task < 1 || task > 3) throw SpecError("task must be 1, 2 or 3, got " + std::to_string(task));
    if (epochs < 0) throw SpecError("epochs must be >= 0");
    if (batch_size == 0) throw SpecError("batch_size must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw SpecError("lr must be a positive finite number");
    if (warmup_steps < 0) throw SpecError("warmup_steps must be >= 0");
    if (beam_size == 0) throw SpecError("beam_size must be >= 1");
    policy.validate();
    task2.validate();
  }

  /// Fails with an I/O error naming the first input file that is missing.
  void check_inputs() const {
    for (const auto* p : {&paths.corpus, &paths.catalog, &paths.emotions, &paths.split}) {
      if (p->empty() || !std::filesystem::exists(*p)) throw IoError("input file not found: " + p->string());
    }
  }

  EmotionFeatures features() const { return {use_ef, use_edp}; }

  ModelConfig model_config(const Vocab& vocab, const EmotionSet& emotions) const {
    ModelConfig c;
    c.n_layers = n_layers;
    c.n_heads = n_heads;
    c.d_model = d_model;
    c.d_ff = d_ff;
    c.vocab_size = static_cast<int>(vocab.size());
    c.n_emotions = static_cast<int>(emotions.size());
    c.max_positions = static_cast<int>(policy.max_total());
    c.validate();
    return c;
  }

  TrainOptions train_options() const {
    TrainOptions o;
    o.epochs = epochs;
    o.batch_size = batch_size;
    o.seed = seed;
    o.adam.base_lr = lr;
    o.adam.warmup_steps = warmup_steps;
    return o;
  }

  nlohmann::json to_json() const {
    return {{"task", task},
            {"paths",
             {{"corpus", paths.corpus.string()},
              {"catalog", paths.catalog.string()},
              {"emotions", paths.emotions.string()},
              {"split", paths.split.string()}}},
            {"model", {{"n_layers", n_layers}, {"n_heads", n_heads}, {"d_model", d_model}, {"d_ff", d_ff}}},
            {"task2",
             {{"margin", task2.margin},
              {"negatives_per_positive", task2.negatives_per_positive},
              {"resample_each_epoch", task2.resample_each_epoch},
              {"rename_prob", task2.rename_prob}}},
            {"use_ef", use_ef},
            {"use_edp", use_edp},
            {"seed", seed},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"lr", lr},
            {"warmup_steps", warmup_steps},
            {"max_context_tokens", policy.max_context_tokens},
            {"max_response_tokens", policy.max_response_tokens},
            {"beam_size", beam_size},
            {"eval_seed", eval_seed}};
  }

  /// Missing keys keep their defaults; unknown keys are rejected.
  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    if (!j.is_object()) throw SpecError("run config must be a JSON object");
    try {
      for (const auto& [key, v] : j.items()) {
        if (key == "task") {
          c.task = v.get<int>();
        } else if (key == "paths") {
          for (const auto& [name, p] : v.items()) {
            if (name == "corpus") c.paths.corpus = p.get<std::string>();
            else if (name == "catalog") c.paths.catalog = p.get<std::string>();
            else if (name == "emotions") c.paths.emotions = p.get<std::string>();
            else if (name == "split") c.paths.split = p.get<std::string>();
            else throw SpecError("unknown path key '" + name + "'");
          }
        } else if (key == "model") {
          for (const auto& [name, x] : v.items()) {
            if (name == "n_layers") c.n_layers = x.get<int>();
            else if (name == "n_heads") c.n_heads = x.get<int>();
            else if (name == "d_model") c.d_model = x.get<int>();
            else if (name == "d_ff") c.d_ff = x.get<int>();
            else throw SpecError("unknown model key '" + name + "'");
          }
        } else if (key == "task2") {
          for (const auto& [name, x] : v.items()) {
            if (name == "margin") c.task2.margin = x.get<double>();
            else if (name == "negatives_per_positive") c.task2.negatives_per_positive = x.get<std::size_t>();
            else if (name == "resample_each_epoch") c.task2.resample_each_epoch = x.get<bool>();
            else if (name == "rename_prob") c.task2.rename_prob = x.get<double>();
            else throw SpecError("unknown task2 key '" + name + "'");
          }
        } else if (key == "use_ef") {
          c.use_ef = v.get<bool>();
        } else if (key == "use_edp") {
          c.use_edp = v.get<bool>();
        } else if (key == "seed") {
          c.seed = v.get<std::uint64_t>();
        } else if (key == "epochs") {
          c.epochs = v.get<int>();
        } else if (key == "batch_size") {
          c.batch_size = v.get<std::size_t>();
        } else if (key == "lr") {
          c.lr = v.get<double>();
        } else if (key == "warmup_steps") {
          c.warmup_steps = v.get<std::int64_t>();
        } else if (key == "max_context_tokens") {
          c.policy.max_context_tokens = v.get<std::size_t>();
        } else if (key == "max_response_tokens") {
          c.policy.max_response_tokens = v.get<std::size_t>();
        } else if (key == "beam_size") {
          c.beam_size = v.get<std::size_t>();
        } else if (key == "eval_seed") {
          c.eval_seed = v.get<std::uint64_t>();
        } else {
          throw SpecError("unknown config key '" + key + "'");
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw SpecError(std::string("bad config value: ") + e.what());
    }
    c.validate();
    return c;
  }

  static RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(e.what(), 1);
    }
    return from_json(j);
  }
};

// ---------------------------------------------------------------- data

struct DataBundle {
  MemeCatalog catalog;
  EmotionSet emotions;
  std::vector<Dialogue> dialogues;
  CorpusSplit split;
  Vocab vocab;

  const std::vector<Dialogue>& part(const std::string& name) const {
    if (name == "train") return split.train;
    if (name == "valid_seen") return split.valid_seen;
    if (name == "valid_unseen") return split.valid_unseen;
    throw SpecError("unknown split '" + name + "' (expected train, valid_seen or valid_unseen)");
  }
};

inline DataBundle load_data(const CorpusPaths& paths) {
  DataBundle b;
  b.catalog = load_catalog(paths.catalog);
  b.emotions = load_emotions(paths.emotions);
  b.dialogues = load_corpus(paths.corpus, b.catalog, b.emotions);
  b.split = split_from_json(read_json_file(paths.split), b.dialogues);
  b.vocab = build_vocab(b.dialogues, b.catalog, b.emotions);
  return b;
}

struct GenCorpusOptions {
  GeneratorSpec generator;
  int n_unseen = 20;
  std::uint64_t seed = 0;
};

inline CorpusPaths gen_corpus(const std::filesystem::path& dir, const GenCorpusOptions& options) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const SyntheticCorpus sc = generate_synthetic(options.generator, options.seed);
  const CorpusSplit split = make_split(sc.dialogues, sc.catalog, options.n_unseen, options.seed);
  const CorpusPaths paths = CorpusPaths::in(dir);
  auto write_json = [](const std::filesystem::path& p, const nlohmann::ordered_json& j) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("short write to " + p.string());
  };
  write_corpus(paths.corpus, sc.dialogues);
  write_json(paths.catalog, catalog_to_json(sc.catalog));
  write_json(paths.emotions, emotions_to_json(sc.emotions));
  write_json(paths.split, split_to_json(split, options.seed));
  return paths;
}

// ---------------------------------------------------------------- train

struct TrainSummary {
  int task = 0;
  std::size_t steps = 0;
  double final_loss = 0.0;  // mean loss of the last epoch, NaN when no epoch ran
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;

  std::string line() const {
    std::ostringstream out;
    out << "task=" << task << " steps=" << steps << " final_loss=" << std::setprecision(6) << final_loss
        << " wall_time=" << std::fixed << std::setprecision(1) << wall_seconds << "s seed=" << seed;
    return out.str();
  }
};

/// Trains the task model on the split's training part. The checkpoint header
/// carries the resolved config, vocabulary, catalog and emotion set so eval
/// and chat need nothing else. `loss_log` gets one CSV row per step.
inline TrainSummary train_run(const RunConfig& config, const std::filesystem::path& checkpoint_path,
                              std::ostream* loss_log = nullptr) {
  config.validate();
  config.check_inputs();
  const auto t0 = std::chrono::steady_clock::now();
  const DataBundle data = load_data(config.paths);
  Parameters params = init_parameters(config.model_config(data.vocab, data.emotions), config.seed);

  TrainOptions options = config.train_options();
  if (loss_log) {
    *loss_log << "step,loss,lr\n";
    options.on_step = [loss_log](const StepRecord& r) {
      *loss_log << r.step << ',' << std::setprecision(17) << r.loss << ',' << r.lr << '\n';
    };
  }
  TrainResult result;
  switch (config.task) {
    case 1:
      result = train_generation(params, {&data.split.train, &data.vocab, config.policy}, options);
      break;
    case 2: {
      RetrievalTrainSetup setup;
      setup.dialogues = &data.split.train;
      setup.catalog = &data.catalog;
      setup.vocab = &data.vocab;
      setup.policy = config.policy;
      setup.task = config.task2;
      setup.negative_pool = query_pool_for(data.catalog, data.split.held_out_memes, false);
      result = train_retrieval(params, setup, options);
      break;
    }
    case 3:
      result = train_emotion(params,
                             {&data.split.train, &data.catalog, &data.emotions, &data.vocab, config.policy,
                              config.features()},
                             options);
      break;
  }

  nlohmann::json header;
  header["task"] = config.task;
  header["run_config"] = config.to_json();
  header["vocab"] = data.vocab.to_json();
  header["catalog"] = catalog_to_json(data.catalog);
  header["emotions"] = emotions_to_json(data.emotions);
  save_checkpoint(checkpoint_path, parameters_to_checkpoint(params, header));

  TrainSummary s;
  s.task = config.task;
  s.steps = result.steps.size();
  s.final_loss = result.epoch_mean_loss.empty() ? std::nan("") : result.epoch_mean_loss.back();
  s.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  s.seed = config.seed;
  return s;
}

// ---------------------------------------------------------------- eval

/// A checkpoint with everything needed to run its model.
struct LoadedModel {
  int task = 0;
  RunConfig config;
  Parameters params;
  Vocab vocab;
  MemeCatalog catalog;
  EmotionSet emotions;
};

inline LoadedModel load_model(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  LoadedModel m;
  try {
    m.task = ckpt.header.at("task").get<int>();
    m.config = RunConfig::from_json(ckpt.header.at("run_config"));
    m.vocab = Vocab::from_json(ckpt.header.at("vocab"));
    m.catalog = catalog_from_json(ckpt.header.at("catalog"));
    m.emotions = emotions_from_json(ckpt.header.at("emotions"));
  } catch (const nlohmann::json::exception& e) {
    throw VersionError("checkpoint " + path.string() + " lacks run metadata: " + e.what());
  } catch (const SpecError& e) {
    throw VersionError("checkpoint " + path.string() + " has an invalid run config: " + e.what());
  }
  m.params = parameters_from_checkpoint(ckpt);
  if (static_cast<std::size_t>(m.params.config.vocab_size) != m.vocab.size()) {
    throw VersionError("checkpoint vocabulary does not match its embedding table");
  }
  return m;
}

struct EvalRequest {
  std::filesystem::path checkpoint;
  std::string split = "valid_seen";
  std::optional<int> task;                 // must match the checkpoint when set
  std::optional<CorpusPaths> paths;        // defaults to the paths recorded at training
  std::optional<std::uint64_t> eval_seed;  // defaults to the recorded eval seed
};

/// Never writes to the checkpoint or corpus files.
inline MetricsReport eval_run(const EvalRequest& request) {
  LoadedModel m = load_model(request.checkpoint);
  if (request.task && *request.task != m.task) {
    throw VersionError("checkpoint was trained for task " + std::to_string(m.task) + ", not task " +
                       std::to_string(*request.task));
  }
  RunConfig config = m.config;
  if (request.paths) config.paths = *request.paths;
  if (request.eval_seed) config.eval_seed = *request.eval_seed;
  config.check_inputs();
  const DataBundle data = load_data(config.paths);
  if (data.vocab.to_json() != m.vocab.to_json()) {
    throw VersionError("corpus vocabulary differs from the checkpoint's; was it trained on another corpus?");
  }
  if (!(data.catalog == m.catalog) || !(data.emotions == m.emotions)) {
    throw VersionError("catalog or emotion set differs from the checkpoint's");
  }
  const std::vector<Dialogue>& dialogues = data.part(request.split);

  MetricsReport report;
  switch (m.task) {
    case 1: {
      GenerationOptions options;
      options.beam_size = config.beam_size;
      report = evaluate_generation(m.params, data.vocab, dialogues, config.policy, options);
      break;
    }
    case 2: {
      const bool unseen = request.split == "valid_unseen";
      const auto pool = query_pool_for(data.catalog, data.split.held_out_memes, unseen);
      const auto queries = retrieval_queries(dialogues, pool, 9, config.eval_seed);
      report = evaluate_retrieval(m.params, data.vocab, data.catalog, dialogues, queries, config.policy);
      report.metadata["candidates"] = "ground truth + 9 distractors";
      break;
    }
    case 3:
      report = evaluate_emotion(m.params, data.vocab, data.catalog, data.emotions, dialogues, config.features(),
                                config.policy);
      break;
  }
  report.split = request.split;
  report.seed = config.eval_seed;
  report.metadata["config"] = config.to_json();
  return report;
}

inline void write_report(const std::filesystem::path& path, const MetricsReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << report.to_json().dump(2) << '\n';
  if (!out) throw IoError("short write to " + path.string());
}

// ---------------------------------------------------------------- chat

struct ChatReply {
  std::string text;
  int meme_id = 0;
  int emotion_id = 0;
};

/// Generation, retrieval and emotion models chained over one conversation.
/// The user speaks as A, the system as B.
class ChatSession {
 public:
  ChatSession(LoadedModel generator, LoadedModel retriever, LoadedModel classifier)
      : gen_(std::move(generator)), ret_(std::move(retriever)), emo_(std::move(classifier)) {
    if (gen_.task != 1 || ret_.task != 2 || emo_.task != 3) {
      throw VersionError("chat needs checkpoints for tasks 1, 2 and 3 in that order");
    }
    if (!(ret_.catalog == emo_.catalog) || !(ret_.emotions == emo_.emotions)) {
      throw VersionError("retrieval and emotion checkpoints were trained on different catalogs");
    }
  }

  const std::vector<Turn>& history() const { return history_; }
  const MemeCatalog& catalog() const { return ret_.catalog; }
  const EmotionSet& emotions() const { return emo_.emotions; }

  ChatReply respond(const std::string& utterance) {
    history_.push_back({Speaker::A, utterance, std::nullopt, std::nullopt});
    GenerationOptions options;
    options.beam_size = gen_.config.beam_size;
    const Hypothesis h = generate_response(gen_.params, gen_.vocab, history_, gen_.config.policy, options);
    ChatReply reply;
    reply.text = gen_.vocab.decode(strip_eos(h));
    if (reply.text.empty()) reply.text = "...";
    reply.meme_id = pick_meme(history_, reply.text);
    // The label only fills the masked span's targets, which classification ignores.
    const Turn turn{Speaker::B, reply.text, reply.meme_id, 0};
    const SequenceInput in =
        encode_emotion(history_, turn, emo_.catalog, emo_.emotions, emo_.vocab, emo_.config.features(), emo_.config.policy);
    reply.emotion_id = classify_emotion(emo_.params, in, 1).front().first;
    history_.push_back({Speaker::B, reply.text, reply.meme_id, reply.emotion_id});
    return reply;
  }

  /// Arg-max over the whole catalog.
  int pick_meme(std::span<const Turn> context, const std::string& response) const {
    return retrieve(ret_.params, ret_.vocab, ret_.catalog, context, response, ret_.catalog.entries(),
                    ret_.config.policy)
        .top();
  }

 private:
  LoadedModel gen_;
  LoadedModel ret_;
  LoadedModel emo_;
  std::vector<Turn> history_;
};

/// Prompts with "> ". Blank lines re-prompt; "/quit" or end of input stops.
inline void run_chat(ChatSession& session, std::istream& in, std::ostream& out) {
  std::string line;
  while (true) {
    out << "> " << std::flush;
    if (!std::getline(in, line)) {
      out << '\n';
      return;
    }
    const auto begin = line.find_first_not_of(" \t\r");
    if (begin == std::string::npos) continue;
    line = line.substr(begin, line.find_last_not_of(" \t\r") - begin + 1);
    if (line == "/quit") return;
    if (tokenize(line).empty()) continue;
    const ChatReply r = session.respond(line);
    out << r.text << '\n'
        << "  [meme " << r.meme_id << ": " << session.catalog().at(r.meme_id).title << "] ("
        << session.emotions().at(r.emotion_id).description << ")\n";
  }
}

}  // namespace memedial
