// Copyright 2026 The memedial Authors
// SPDX-License-Identifier: Apache-2.0

// Evaluation protocols for the three tasks. Every function is a pure read of
// a frozen parameter snapshot; candidate sampling uses its own seeded stream
// so reports are reproducible.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "memedial/corpus.hpp"
#include "memedial/metrics.hpp"
#include "memedial/model.hpp"
#include "memedial/rng.hpp"
#include "memedial/tasks.hpp"
#include "memedial/textproc.hpp"

namespace memedial {

// ---------------------------------------------------------------- task 1

/// Token-weighted mean NLL of every response turn (one or more context turns).
inline double mean_token_nll(const Parameters& params, const Vocab& vocab, const std::vector<Dialogue>& dialogues,
                             const TruncationPolicy& policy) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (const TurnRef& ref : response_turns(dialogues)) {
    const SequenceInput in = encode_generation(context_of(dialogues, ref), target_of(dialogues, ref).text, vocab, policy);
    total += nll_value(params, in) * static_cast<double>(in.lm_labels.size());
    tokens += in.lm_labels.size();
  }
  if (tokens == 0) throw ContractError("no response tokens to score");
  return total / static_cast<double>(tokens);
}

struct GenerationSample {
  std::string dialogue_id;
  std::vector<std::string> reference;
  std::vector<std::string> generated;
};

/// One query per dialogue: every turn but the last is context, the last turn
/// is the reference.
inline MetricsReport evaluate_generation(const Parameters& params, const Vocab& vocab,
                                         const std::vector<Dialogue>& dialogues, const TruncationPolicy& policy,
                                         const GenerationOptions& options, std::vector<GenerationSample>* samples = nullptr) {
  std::vector<TokenList> candidates, references;
  for (const Dialogue& d : dialogues) {
    const std::span<const Turn> context = std::span<const Turn>(d.turns).first(d.turns.size() - 1);
    const Hypothesis h = generate_response(params, vocab, context, policy, options);
    candidates.push_back(tokenize(vocab.decode(strip_eos(h))));
    references.push_back(tokenize(d.turns.back().text));
    if (samples) samples->push_back({d.dialogue_id, references.back(), candidates.back()});
  }
  MetricsReport report;
  report.task = 1;
  report.n_examples = dialogues.size();
  report.metrics = {{"bleu2", bleu_n(candidates, references, 2)},
                    {"bleu4", bleu_n(candidates, references, 4)},
                    {"dist1", dist_n(candidates, 1)},
                    {"dist2", dist_n(candidates, 2)}};
  report.metadata["bleu"] = "corpus-level, whitespace tokens, uniform weights, no smoothing";
  report.metadata["beam_size"] = options.beam_size;
  return report;
}

// ---------------------------------------------------------------- task 2

struct RetrievalQuery {
  TurnRef ref;
  std::vector<int> candidates;  // ground truth first, then distractors
};

/// Builds the 10-candidate protocol: each meme turn whose meme lies in
/// `query_pool` is a query; its candidates are the ground truth plus up to
/// `n_distractors` memes drawn from `query_pool` without replacement.
inline std::vector<RetrievalQuery> retrieval_queries(const std::vector<Dialogue>& dialogues,
                                                     const std::vector<int>& query_pool, std::size_t n_distractors,
                                                     std::uint64_t seed) {
  const std::set<int> pool(query_pool.begin(), query_pool.end());
  Rng rng(seed);
  std::vector<RetrievalQuery> out;
  for (const TurnRef& ref : meme_turns(dialogues, [&](int m) { return pool.contains(m); })) {
    const int truth = *target_of(dialogues, ref).meme_id;
    RetrievalQuery q{ref, {truth}};
    const std::size_t k = std::min(n_distractors, query_pool.size() - 1);
    for (int m : sample_negatives(truth, query_pool, k, rng)) q.candidates.push_back(m);
    out.push_back(std::move(q));
  }
  return out;
}

/// Seen splits draw queries and distractors from memes outside
/// `held_out`; the unseen split draws both from `held_out`.
inline std::vector<int> query_pool_for(const MemeCatalog& catalog, const std::set<int>& held_out, bool unseen) {
  std::vector<int> pool;
  for (int id : catalog.ids()) {
    if (held_out.contains(id) == unseen) pool.push_back(id);
  }
  return pool;
}

inline MetricsReport evaluate_retrieval(const Parameters& params, const Vocab& vocab, const MemeCatalog& catalog,
                                        const std::vector<Dialogue>& dialogues,
                                        const std::vector<RetrievalQuery>& queries, const TruncationPolicy& policy) {
  std::vector<RankedCandidates> rankings;
  std::vector<int> truths;
  for (const RetrievalQuery& q : queries) {
    std::vector<MemeEntry> candidates;
    for (int id : q.candidates) candidates.push_back(catalog.at(id));
    const Turn& target = target_of(dialogues, q.ref);
    rankings.push_back(retrieve(params, vocab, catalog, context_of(dialogues, q.ref), target.text, candidates, policy));
    truths.push_back(*target.meme_id);
  }
  MetricsReport report;
  report.task = 2;
  report.n_examples = queries.size();
  report.metrics = {{"map", mean_average_precision(rankings, truths)},
                    {"recall_10@1", recall_at_k(rankings, truths, 1)},
                    {"recall_10@3", recall_at_k(rankings, truths, 3)},
                    {"recall_10@5", recall_at_k(rankings, truths, 5)}};
  return report;
}

struct Separation {
  double mean_positive = 0.0;
  double mean_negative = 0.0;
  double gap() const { return mean_positive - mean_negative; }
};

/// Mean relevance of every training positive versus `k` sampled negatives each.
inline Separation relevance_separation(const Parameters& params, const Vocab& vocab, const MemeCatalog& catalog,
                                       const std::vector<Dialogue>& dialogues, const std::vector<int>& negative_pool,
                                       std::size_t k, const TruncationPolicy& policy, std::uint64_t seed) {
  Rng rng(seed);
  double pos = 0.0, neg = 0.0;
  std::size_t n_pos = 0, n_neg = 0;
  for (const TurnRef& ref : meme_turns(dialogues)) {
    const Turn& target = target_of(dialogues, ref);
    const auto context = context_of(dialogues, ref);
    auto score = [&](int id) {
      return relevance_score(params, encode_retrieval(context, target.text, catalog.at(id), catalog, vocab, policy));
    };
    pos += score(*target.meme_id);
    ++n_pos;
    for (int id : sample_negatives(*target.meme_id, negative_pool, k, rng)) {
      neg += score(id);
      ++n_neg;
    }
  }
  if (n_pos == 0) throw ContractError("no meme turns to measure separation on");
  return {pos / static_cast<double>(n_pos), neg / static_cast<double>(n_neg)};
}

// ---------------------------------------------------------------- task 3

inline MetricsReport evaluate_emotion(const Parameters& params, const Vocab& vocab, const MemeCatalog& catalog,
                                      const EmotionSet& emotions, const std::vector<Dialogue>& dialogues,
                                      const EmotionFeatures& features, const TruncationPolicy& policy) {
  const auto n = static_cast<std::size_t>(params.config.n_emotions);
  std::vector<std::vector<int>> predictions;
  std::vector<int> truths;
  for (const TurnRef& ref : meme_turns(dialogues)) {
    const Turn& target = target_of(dialogues, ref);
    const SequenceInput in =
        encode_emotion(context_of(dialogues, ref), target, catalog, emotions, vocab, features, policy);
    std::vector<int> ranked;
    for (const auto& [id, p] : classify_emotion(params, in, n)) ranked.push_back(id);
    predictions.push_back(std::move(ranked));
    truths.push_back(*target.emotion_id);
  }
  MetricsReport report;
  report.task = 3;
  report.n_examples = truths.size();
  for (std::size_t k : {1, 3, 5}) {
    report.metrics["acc@" + std::to_string(k)] = accuracy_at_k(predictions, truths, std::min(k, n));
  }
  report.metadata["use_ef"] = features.use_ef;
  report.metadata["use_edp"] = features.use_edp;
  return report;
}

}  // namespace memedial
