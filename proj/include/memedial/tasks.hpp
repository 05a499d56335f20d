// Copyright 2026 The memedial Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "memedial/adam.hpp"
#include "memedial/corpus.hpp"
#include "memedial/errors.hpp"
#include "memedial/metrics.hpp"
#include "memedial/model.hpp"
#include "memedial/rng.hpp"
#include "memedial/tensor.hpp"
#include "memedial/textproc.hpp"

namespace memedial {

// ---------------------------------------------------------------- examples

/// A position inside a corpus: turn `turn` of dialogue `dialogue` is the
/// target, turns before it are the context.
struct TurnRef {
  std::size_t dialogue = 0;
  std::size_t turn = 0;
};

inline std::span<const Turn> context_of(const std::vector<Dialogue>& dialogues, TurnRef ref) {
  return std::span<const Turn>(dialogues[ref.dialogue].turns).first(ref.turn);
}

inline const Turn& target_of(const std::vector<Dialogue>& dialogues, TurnRef ref) {
  return dialogues[ref.dialogue].turns[ref.turn];
}

/// Every turn with at least one turn of context.
inline std::vector<TurnRef> response_turns(const std::vector<Dialogue>& dialogues) {
  std::vector<TurnRef> out;
  for (std::size_t d = 0; d < dialogues.size(); ++d) {
    for (std::size_t t = 1; t < dialogues[d].turns.size(); ++t) out.push_back({d, t});
  }
  return out;
}

/// Every meme-bearing turn, optionally restricted to memes accepted by `keep`.
inline std::vector<TurnRef> meme_turns(const std::vector<Dialogue>& dialogues,
                                       const std::function<bool(int)>& keep = nullptr) {
  std::vector<TurnRef> out;
  for (std::size_t d = 0; d < dialogues.size(); ++d) {
    for (std::size_t t = 0; t < dialogues[d].turns.size(); ++t) {
      const Turn& turn = dialogues[d].turns[t];
      if (turn.meme_id && (!keep || keep(*turn.meme_id))) out.push_back({d, t});
    }
  }
  return out;
}

// ---------------------------------------------------------------- gradients

/// Sums parameter gradients over the graphs of one batch.
class GradientBuffer {
 public:
  explicit GradientBuffer(Parameters& params) : params_(params.all()) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      index_.emplace(params_[i], i);
      grads_.push_back(Tensor::zeros_like(params_[i]->value));
    }
  }

  void accumulate(const Graph& g) {
    for (const auto& [param, grad] : g.parameter_gradients()) {
      auto it = index_.find(param);
      if (it == index_.end()) throw ContractError("gradient for unknown parameter " + param->name);
      grads_[it->second] += *grad;
    }
  }

  void zero() {
    for (auto& g : grads_) g.fill(0.0);
  }

  std::span<Parameter* const> params() const { return params_; }
  std::span<const Tensor> grads() const { return grads_; }

 private:
  std::vector<Parameter*> params_;
  std::map<const Parameter*, std::size_t> index_;
  std::vector<Tensor> grads_;
};

struct StepRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainOptions {
  int epochs = 5;
  std::size_t batch_size = 32;
  AdamOptions adam;
  std::uint64_t seed = 0;
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<double> epoch_mean_loss;
};

namespace detail {

/// Shared minibatch loop. `example_loss` builds the graph for one unit of
/// work and returns (loss var, weight); the batch objective is the weighted
/// mean of unit losses.
template <typename Unit, typename LossFn>
TrainResult run_minibatches(Parameters& params, std::vector<Unit> units, const TrainOptions& options, Rng& rng,
                            LossFn&& example_loss, const std::function<void(int epoch, std::vector<Unit>&)>& on_epoch = nullptr) {
  if (options.epochs < 0) throw SpecError("epochs must be >= 0");
  if (options.batch_size == 0) throw SpecError("batch_size must be positive");
  TrainResult result;
  if (units.empty() || options.epochs == 0) return result;
  auto all = params.all();
  AdamState adam(std::span<const Parameter* const>(all.data(), all.size()), options.adam);
  GradientBuffer buffer(params);
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    if (on_epoch) on_epoch(epoch, units);
    rng.shuffle(units);
    double epoch_loss = 0.0, epoch_weight = 0.0;
    for (std::size_t begin = 0; begin < units.size(); begin += options.batch_size) {
      const std::size_t end = std::min(units.size(), begin + options.batch_size);
      double batch_weight = 0.0;
      for (std::size_t i = begin; i < end; ++i) batch_weight += example_loss.weight(units[i]);
      buffer.zero();
      double batch_loss = 0.0;
      for (std::size_t i = begin; i < end; ++i) {
        Graph g;
        const Var loss = example_loss(g, units[i]);
        const double w = example_loss.weight(units[i]) / batch_weight;
        g.backward(loss, w);
        buffer.accumulate(g);
        batch_loss += w * g.value(loss).item();
      }
      const double lr = adam.step(buffer.params(), buffer.grads());
      StepRecord record{adam.step_count(), batch_loss, lr};
      result.steps.push_back(record);
      if (options.on_step) options.on_step(record);
      epoch_loss += batch_loss * batch_weight;
      epoch_weight += batch_weight;
    }
    result.epoch_mean_loss.push_back(epoch_loss / epoch_weight);
  }
  return result;
}

}  // namespace detail

// ---------------------------------------------------------------- task 1: generation

/// Mean negative log-likelihood of the labeled response tokens.
inline Var nll_loss(Graph& g, const Parameters& params, const SequenceInput& input) {
  if (input.lm_labels.empty()) throw ContractError("nll_loss needs a non-empty label span");
  Var hidden = encode(g, params, input);
  std::vector<std::size_t> rows;
  rows.reserve(input.lm_label_positions.size());
  for (auto p : input.lm_label_positions) rows.push_back(p - 1);
  return g.cross_entropy(lm_logits(g, hidden, params, rows), input.lm_labels);
}

inline double nll_value(const Parameters& params, const SequenceInput& input) {
  Graph g(false);
  return g.value(nll_loss(g, params, input)).item();
}

/// Log-softmax of a logit row.
inline std::vector<double> log_softmax(std::span<const double> logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double v : logits) total += std::exp(v - peak);
  const double log_z = peak + std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_z;
  return out;
}

struct Hypothesis {
  std::vector<int> tokens;  // includes the final [EOS] when finished
  double score = 0.0;       // sum of per-step log-probabilities
  bool finished = false;

  friend bool operator==(const Hypothesis&, const Hypothesis&) = default;
};

namespace detail {

inline bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

}  // namespace detail

/// Length-unnormalized beam search. `next_log_probs(tokens)` returns the
/// log-distribution of the next token after the generated prefix `tokens`.
/// Each step keeps the best `beam_size` expansions (score desc, then the
/// lexicographically smaller token sequence); expansions ending in `eos`
/// complete. The search also stops once no live beam can beat the best
/// completed one, since log-probabilities never increase a score. Beams still
/// live after `max_len` tokens count as completed.
template <typename Scorer>
Hypothesis beam_search(Scorer&& next_log_probs, int eos, std::size_t beam_size, std::size_t max_len) {
  if (beam_size == 0) throw ContractError("beam_size must be >= 1");
  if (max_len == 0) throw ContractError("max_len must be >= 1");
  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> done;
  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<Hypothesis> expansions;
    for (const Hypothesis& h : live) {
      const std::vector<double> lp = next_log_probs(std::span<const int>(h.tokens));
      for (std::size_t tok = 0; tok < lp.size(); ++tok) {
        Hypothesis e{h.tokens, h.score + lp[tok], false};
        e.tokens.push_back(static_cast<int>(tok));
        e.finished = static_cast<int>(tok) == eos;
        expansions.push_back(std::move(e));
      }
    }
    const std::size_t keep = std::min(beam_size, expansions.size());
    std::partial_sort(expansions.begin(), expansions.begin() + static_cast<std::ptrdiff_t>(keep), expansions.end(),
                      detail::better);
    live.clear();
    for (std::size_t i = 0; i < keep; ++i) {
      (expansions[i].finished ? done : live).push_back(std::move(expansions[i]));
    }
    if (!done.empty() && !live.empty()) {
      const auto best_done = std::min_element(done.begin(), done.end(), detail::better);
      const auto best_live = std::min_element(live.begin(), live.end(), detail::better);
      if (best_done->score >= best_live->score) live.clear();
    }
  }
  done.insert(done.end(), live.begin(), live.end());
  return *std::min_element(done.begin(), done.end(), detail::better);
}

/// Arg-max decoding (ties to the smaller token id).
template <typename Scorer>
Hypothesis greedy_decode(Scorer&& next_log_probs, int eos, std::size_t max_len) {
  Hypothesis h;
  while (h.tokens.size() < max_len) {
    const std::vector<double> lp = next_log_probs(std::span<const int>(h.tokens));
    const auto best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    h.tokens.push_back(best);
    h.score += lp[static_cast<std::size_t>(best)];
    if (best == eos) {
      h.finished = true;
      break;
    }
  }
  return h;
}

/// Next-token log-probabilities from the prefix-LM for a context plus a
/// partially generated response.
class ResponseScorer {
 public:
  ResponseScorer(const Parameters& params, const Vocab& vocab, std::span<const Turn> context,
                 const TruncationPolicy& policy)
      : params_(params), prefix_(encode_generation(context, std::nullopt, vocab, policy)) {}

  std::vector<double> operator()(std::span<const int> generated) const {
    SequenceInput in = prefix_;
    for (int tok : generated) {
      in.token_ids.push_back(tok);
      in.segment_ids.push_back(1);
      in.position_ids.push_back(static_cast<int>(in.position_ids.size()));
    }
    Graph g(false);
    Var hidden = encode(g, params_, in);
    const std::size_t last = in.size() - 1;
    const Tensor& logits = g.value(lm_logits(g, hidden, params_, std::span<const std::size_t>(&last, 1)));
    return log_softmax(logits.data());
  }

  /// Room left for generated tokens under the model's position limit.
  std::size_t capacity() const {
    return static_cast<std::size_t>(params_.config.max_positions) - prefix_.size();
  }

 private:
  const Parameters& params_;
  SequenceInput prefix_;
};

struct GenerationOptions {
  std::size_t beam_size = 5;
  std::size_t max_len = 128;
};

/// Beam-search response for a text-only context. Tokens exclude [EOS].
inline Hypothesis generate_response(const Parameters& params, const Vocab& vocab, std::span<const Turn> context,
                                    const TruncationPolicy& policy, const GenerationOptions& options) {
  ResponseScorer scorer(params, vocab, context, policy);
  const std::size_t max_len = std::min({options.max_len, policy.max_response_tokens, scorer.capacity()});
  return beam_search(scorer, kEos, options.beam_size, max_len);
}

inline std::vector<int> strip_eos(const Hypothesis& h) {
  std::vector<int> out = h.tokens;
  if (!out.empty() && out.back() == kEos) out.pop_back();
  return out;
}

// ---------------------------------------------------------------- task 2: retrieval

struct Task2TrainConfig {
  double margin = 0.2;
  std::size_t negatives_per_positive = 5;
  bool resample_each_epoch = true;
  /// Probability that a training group has every token of its candidates'
  /// title and OCR text replaced, consistently across the group's sequences,
  /// by a random vocabulary token. The response keeps its overlap with the
  /// positive, so the head has to learn matching rather than meme ids.
  double rename_prob = 0.0;

  void validate() const {
    if (!(margin > 0.0)) throw SpecError("margin must be > 0");
    if (negatives_per_positive < 1) throw SpecError("negatives_per_positive must be >= 1");
    if (!(rename_prob >= 0.0 && rename_prob <= 1.0)) throw SpecError("rename_prob must be in [0, 1]");
  }
};

/// max(0, p_neg - p_pos + margin)
inline double hinge_loss(double p_pos, double p_neg, double margin) { return std::max(0.0, p_neg - p_pos + margin); }

inline Var hinge_loss(Graph& g, Var p_pos, Var p_neg, double margin) {
  return g.relu(g.add_scalar(g.sub(p_neg, p_pos), margin));
}

/// k distinct ids drawn uniformly without replacement from pool minus positive.
inline std::vector<int> sample_negatives(int positive, std::span<const int> pool, std::size_t k, Rng& rng) {
  std::vector<int> others;
  for (int id : pool) {
    if (id != positive) others.push_back(id);
  }
  if (others.size() < k) {
    throw SpecError("candidate pool too small: " + std::to_string(others.size()) + " negatives available, " +
                    std::to_string(k) + " requested");
  }
  std::vector<int> out;
  for (auto i : rng.sample_indices(others.size(), k)) out.push_back(others[i]);
  return out;
}

inline double relevance_score(const Parameters& params, const SequenceInput& input) {
  Graph g(false);
  return g.value(relevance_prob(g, encode(g, params, input), params)).item();
}

/// Scores every candidate independently with the cross-encoder; the first
/// entry is the arg-max meme.
inline RankedCandidates retrieve(const Parameters& params, const Vocab& vocab, const MemeCatalog& catalog,
                                 std::span<const Turn> context, std::string_view response,
                                 std::span<const MemeEntry> candidates, const TruncationPolicy& policy) {
  if (candidates.empty()) throw ContractError("retrieve needs at least one candidate");
  RankedCandidates ranked;
  for (const MemeEntry& c : candidates) {
    ranked.entries.emplace_back(c.meme_id,
                                relevance_score(params, encode_retrieval(context, response, c, catalog, vocab, policy)));
  }
  ranked.normalize();
  return ranked;
}

struct RetrievalTrainSetup {
  const std::vector<Dialogue>* dialogues = nullptr;
  const MemeCatalog* catalog = nullptr;
  const Vocab* vocab = nullptr;
  TruncationPolicy policy;
  Task2TrainConfig task;
  std::vector<int> negative_pool;  // meme ids eligible as negatives
};

struct RetrievalUnit {
  TurnRef ref;
  std::vector<int> negatives;
  std::map<int, int> renames;  // token id -> replacement id
};

namespace detail {

/// Every non-reserved vocabulary id. Drawing stand-ins from the whole
/// vocabulary gives every embedding row training signal as an anonymous
/// token; rows that only ever appear as stand-ins stay usable at test time.
inline std::vector<int> rename_pool(const Vocab& vocab) {
  std::vector<int> ids;
  for (auto id = static_cast<int>(reserved_tokens().size()); id < static_cast<int>(vocab.size()); ++id) ids.push_back(id);
  return ids;
}

}  // namespace detail

/// Trains the relevance head and encoder with the pairwise hinge loss. Every
/// positive meme turn is paired with `negatives_per_positive` sampled
/// negatives, redrawn each epoch when resample_each_epoch is set. A batch
/// holds batch_size pairs (rounded to whole positives).
inline TrainResult train_retrieval(Parameters& params, const RetrievalTrainSetup& setup, const TrainOptions& options) {
  setup.task.validate();
  const auto& dialogues = *setup.dialogues;
  Rng rng(options.seed);
  const std::size_t k = setup.task.negatives_per_positive;
  std::vector<RetrievalUnit> units;
  for (const TurnRef& ref : meme_turns(dialogues)) units.push_back({ref, {}});

  struct Loss {
    const RetrievalTrainSetup& setup;
    const Parameters& params;
    double weight(const RetrievalUnit& u) const { return static_cast<double>(u.negatives.size()); }
    Var operator()(Graph& g, const RetrievalUnit& u) const {
      const auto& dialogues = *setup.dialogues;
      const Turn& target = target_of(dialogues, u.ref);
      const auto context = context_of(dialogues, u.ref);
      auto score = [&](int meme_id) {
        SequenceInput in =
            encode_retrieval(context, target.text, setup.catalog->at(meme_id), *setup.catalog, *setup.vocab, setup.policy);
        for (int& t : in.token_ids) {
          if (auto it = u.renames.find(t); it != u.renames.end()) t = it->second;
        }
        return relevance_prob(g, encode(g, params, in), params);
      };
      const Var pos = score(*target.meme_id);
      std::vector<Var> terms;
      for (int neg : u.negatives) terms.push_back(hinge_loss(g, pos, score(neg), setup.task.margin));
      Var total = terms[0];
      for (std::size_t i = 1; i < terms.size(); ++i) total = g.add(total, terms[i]);
      return g.scale(total, 1.0 / static_cast<double>(terms.size()));
    }
  };

  TrainOptions batched = options;
  batched.batch_size = std::max<std::size_t>(1, options.batch_size / k);
  const bool resample = setup.task.resample_each_epoch;
  const std::vector<int> replacements =
      setup.task.rename_prob > 0.0 ? detail::rename_pool(*setup.vocab) : std::vector<int>{};
  auto prepare = [&](int epoch, std::vector<RetrievalUnit>& us) {
    for (auto& u : us) {
      const int pos = *target_of(dialogues, u.ref).meme_id;
      if (epoch == 0 || resample) u.negatives = sample_negatives(pos, setup.negative_pool, k, rng);
      u.renames.clear();
      if (replacements.empty() || !rng.bernoulli(setup.task.rename_prob)) continue;
      std::vector<int> shown{pos};
      shown.insert(shown.end(), u.negatives.begin(), u.negatives.end());
      for (int id : shown) {
        const MemeEntry& m = setup.catalog->at(id);
        for (const std::string* text : {&m.title, &m.ocr_text}) {
          for (int t : setup.vocab->encode(*text)) {
            if (!u.renames.contains(t)) u.renames[t] = replacements[rng.below(replacements.size())];
          }
        }
      }
    }
  };
  return detail::run_minibatches(params, std::move(units), batched, rng, Loss{setup, params},
                                 std::function<void(int, std::vector<RetrievalUnit>&)>(prepare));
}

// ---------------------------------------------------------------- task 3: emotion

struct EmotionLoss {
  Var total;
  Var ce;
  std::optional<Var> mlm;  // absent when EDP is off or nothing is masked
};

/// L = L_CE + L_MLM with unit weights.
inline EmotionLoss emotion_loss(Graph& g, const Parameters& params, const SequenceInput& input, bool use_edp) {
  if (!input.emotion_label) throw ContractError("emotion_loss needs a classification label");
  const int label = *input.emotion_label;
  if (label < 0 || label >= params.config.n_emotions) {
    throw ContractError("label error: emotion " + std::to_string(label) + " outside " +
                        std::to_string(params.config.n_emotions) + " classes");
  }
  Var hidden = encode(g, params, input);
  EmotionLoss out;
  out.ce = g.cross_entropy(emotion_logits(g, hidden, params), std::span<const int>(&label, 1));
  out.total = out.ce;
  if (use_edp) {
    if (auto logits = mlm_logits(g, hidden, params, input.mlm_positions)) {
      out.mlm = g.cross_entropy(*logits, input.mlm_labels);
      out.total = g.add(out.ce, *out.mlm);
    }
  }
  return out;
}

/// Top-k (emotion_id, probability), probability desc then id asc.
inline std::vector<std::pair<int, double>> classify_emotion(const Parameters& params, const SequenceInput& input,
                                                            std::size_t k) {
  const auto n = static_cast<std::size_t>(params.config.n_emotions);
  if (k < 1 || k > n) throw ContractError("classify_emotion needs 1 <= k <= " + std::to_string(n));
  Graph g(false);
  Var probs = g.softmax_rows(emotion_logits(g, encode(g, params, input), params));
  std::vector<std::pair<int, double>> ranked;
  for (std::size_t i = 0; i < n; ++i) ranked.emplace_back(static_cast<int>(i), g.value(probs)[i]);
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  ranked.resize(k);
  return ranked;
}

struct EmotionTrainSetup {
  const std::vector<Dialogue>* dialogues = nullptr;
  const MemeCatalog* catalog = nullptr;
  const EmotionSet* emotions = nullptr;
  const Vocab* vocab = nullptr;
  TruncationPolicy policy;
  EmotionFeatures features;
};

inline TrainResult train_emotion(Parameters& params, const EmotionTrainSetup& setup, const TrainOptions& options) {
  Rng rng(options.seed);
  struct Loss {
    const EmotionTrainSetup& setup;
    const Parameters& params;
    double weight(const TurnRef&) const { return 1.0; }
    Var operator()(Graph& g, const TurnRef& ref) const {
      const auto& ds = *setup.dialogues;
      const SequenceInput in = encode_emotion(context_of(ds, ref), target_of(ds, ref), *setup.catalog,
                                              *setup.emotions, *setup.vocab, setup.features, setup.policy);
      return emotion_loss(g, params, in, setup.features.use_edp).total;
    }
  };
  return detail::run_minibatches(params, meme_turns(*setup.dialogues), options, rng, Loss{setup, params});
}

// ---------------------------------------------------------------- task 1 trainer

struct GenerationTrainSetup {
  const std::vector<Dialogue>* dialogues = nullptr;
  const Vocab* vocab = nullptr;
  TruncationPolicy policy;
};

inline TrainResult train_generation(Parameters& params, const GenerationTrainSetup& setup, const TrainOptions& options) {
  Rng rng(options.seed);
  struct Loss {
    const GenerationTrainSetup& setup;
    const Parameters& params;
    double weight(const TurnRef&) const { return 1.0; }
    Var operator()(Graph& g, const TurnRef& ref) const {
      const auto& ds = *setup.dialogues;
      return nll_loss(g, params, encode_generation(context_of(ds, ref), target_of(ds, ref).text, *setup.vocab, setup.policy));
    }
  };
  return detail::run_minibatches(params, response_turns(*setup.dialogues), options, rng, Loss{setup, params});
}

}  // namespace memedial
