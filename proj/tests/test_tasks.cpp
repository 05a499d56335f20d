// Copyright 2026 The memedial Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "memedial/corpus.hpp"
#include "memedial/tasks.hpp"

namespace memedial {
namespace {

// ---------------------------------------------------------------- fixtures

struct Fixture {
  SyntheticCorpus corpus;
  Vocab vocab;
  TruncationPolicy policy{.max_context_tokens = 32, .max_response_tokens = 16};

  explicit Fixture(int n_dialogues, std::uint64_t seed = 3) {
    GeneratorSpec spec;
    spec.n_dialogues = n_dialogues;
    corpus = generate_synthetic(spec, seed);
    vocab = build_vocab(corpus.dialogues, corpus.catalog, corpus.emotions);
  }

  ModelConfig config(int d = 16) const {
    ModelConfig c;
    c.d_model = d;
    c.d_ff = 2 * d;
    c.n_heads = 2;
    c.vocab_size = static_cast<int>(vocab.size());
    c.max_positions = 64;
    c.n_emotions = static_cast<int>(corpus.emotions.size());
    return c;
  }

  std::span<const Turn> context(std::size_t d, std::size_t t) const {
    return std::span<const Turn>(corpus.dialogues[d].turns).first(t);
  }
};

/// First (dialogue, turn) whose turn carries a meme and has some context.
TurnRef first_meme_turn(const std::vector<Dialogue>& ds) {
  for (const TurnRef& r : meme_turns(ds)) {
    if (r.turn > 0) return r;
  }
  throw ContractError("no meme turn with context");
}

// ---------------------------------------------------------------- hinge + negatives

TEST(Hinge, SpecExamples) {
  EXPECT_EQ(hinge_loss(0.9, 0.5, 0.2), 0.0);
  EXPECT_NEAR(hinge_loss(0.6, 0.6, 0.2), 0.2, 1e-15);
  EXPECT_NEAR(hinge_loss(0.5, 0.7, 0.2), 0.4, 1e-15);
  Graph g;
  Var pos = g.variable(Tensor::scalar(0.5));
  Var neg = g.variable(Tensor::scalar(0.7));
  Var loss = hinge_loss(g, pos, neg, 0.2);
  EXPECT_NEAR(g.value(loss).item(), 0.4, 1e-15);
  g.backward(loss);
  EXPECT_EQ(g.grad(pos).item(), -1.0);
  EXPECT_EQ(g.grad(neg).item(), 1.0);
}

TEST(NegativeSampling, DistinctAndExcludePositive) {
  Rng rng(1);
  const std::vector<int> catalog = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  for (int i = 0; i < 200; ++i) {
    const auto negs = sample_negatives(3, catalog, 5, rng);
    ASSERT_EQ(negs.size(), 5u);
    EXPECT_EQ(std::set<int>(negs.begin(), negs.end()).size(), 5u);
    EXPECT_EQ(std::count(negs.begin(), negs.end(), 3), 0);
  }
}

TEST(NegativeSampling, ExactlyKPlusOneReturnsAllOthers) {
  Rng rng(2);
  const std::vector<int> catalog = {4, 8, 15, 16, 23, 42};
  auto negs = sample_negatives(15, catalog, 5, rng);
  std::sort(negs.begin(), negs.end());
  EXPECT_EQ(negs, (std::vector<int>{4, 8, 16, 23, 42}));
  EXPECT_THROW(sample_negatives(15, std::vector<int>{4, 15, 8}, 5, rng), SpecError);
}

TEST(NegativeSampling, RedrawsDifferAcrossEpochsAndAreUniform) {
  Rng rng(3);
  const std::vector<int> catalog = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  const auto first = sample_negatives(0, catalog, 5, rng);
  bool any_differs = false;
  std::map<int, int> counts;
  const int epochs = 100;
  for (int e = 0; e < epochs; ++e) {
    auto negs = sample_negatives(0, catalog, 5, rng);
    any_differs |= negs != first;
    for (int id : negs) ++counts[id];
  }
  EXPECT_TRUE(any_differs);
  // Each of the 9 candidates appears with probability 5/9 per draw.
  for (int id = 1; id < 10; ++id) EXPECT_NEAR(counts[id] / static_cast<double>(epochs), 5.0 / 9.0, 0.2) << id;
}

// ---------------------------------------------------------------- beam search

/// Scorer over a fixed table: next-token log-probs depend on the whole prefix
/// through a deterministic hash into random distributions.
struct TableScorer {
  std::size_t vocab;
  std::uint64_t seed;

  std::vector<double> operator()(std::span<const int> prefix) const {
    std::uint64_t h = seed;
    for (int t : prefix) h = h * 1000003ULL + static_cast<std::uint64_t>(t) + 1;
    Rng rng(h);
    std::vector<double> logits(vocab);
    for (auto& l : logits) l = rng.normal(0.0, 2.0);
    return log_softmax(logits);
  }
};

/// Every sequence of at most `max_len` tokens that ends at [EOS] (or reaches
/// max_len), with its total log-probability.
void enumerate(const TableScorer& s, int eos, std::size_t max_len, std::vector<int>& prefix, double score,
               std::vector<Hypothesis>& out) {
  const auto lp = s(prefix);
  for (std::size_t tok = 0; tok < lp.size(); ++tok) {
    prefix.push_back(static_cast<int>(tok));
    const double next = score + lp[tok];
    if (static_cast<int>(tok) == eos || prefix.size() == max_len) {
      out.push_back({prefix, next, static_cast<int>(tok) == eos});
    } else {
      enumerate(s, eos, max_len, prefix, next, out);
    }
    prefix.pop_back();
  }
}

TEST(BeamSearch, BeamOneEqualsGreedy) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const TableScorer s{4 + seed % 4, seed};
    const auto beam = beam_search(s, 0, 1, 6);
    const auto greedy = greedy_decode(s, 0, 6);
    EXPECT_EQ(beam.tokens, greedy.tokens) << seed;
    EXPECT_DOUBLE_EQ(beam.score, greedy.score);
  }
}

TEST(BeamSearch, FindsBetterSequenceThanGreedyOnToyDistribution) {
  // Token 1 is the greedy first choice (0.6) but every continuation is flat
  // (each 1/3); token 2 (0.4) is followed by [EOS] with 0.9.
  auto scorer = [](std::span<const int> prefix) {
    if (prefix.empty()) return std::vector<double>{std::log(1e-9), std::log(0.6), std::log(0.4 - 1e-9)};
    if (prefix.size() == 1 && prefix[0] == 1) return std::vector<double>(3, std::log(1.0 / 3.0));
    if (prefix.size() == 1) return std::vector<double>{std::log(0.9), std::log(0.05), std::log(0.05)};
    return std::vector<double>{0.0, std::log(1e-12), std::log(1e-12)};
  };
  const auto greedy = greedy_decode(scorer, 0, 3);
  EXPECT_EQ(greedy.tokens.front(), 1);
  const auto beam = beam_search(scorer, 0, 2, 3);
  EXPECT_EQ(beam.tokens, (std::vector<int>{2, 0}));
  // Exhaustive enumeration over all length-2 completions agrees.
  double best = -1e300;
  std::vector<int> best_seq;
  for (int a = 1; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      std::vector<int> seq = {a, b};
      double score = scorer(std::span<const int>(seq).first(0))[static_cast<std::size_t>(a)] +
                     scorer(std::span<const int>(seq).first(1))[static_cast<std::size_t>(b)];
      if (b != 0) score += scorer(std::span<const int>(seq))[0];
      if (b != 0) seq.push_back(0);
      if (score > best) {
        best = score;
        best_seq = seq;
      }
    }
  }
  EXPECT_EQ(beam.tokens, best_seq);
  EXPECT_NEAR(beam.score, best, 1e-12);
}

TEST(BeamSearch, WideBeamMatchesExhaustiveSearch) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const TableScorer s{3, seed};
    std::vector<Hypothesis> all;
    std::vector<int> prefix;
    enumerate(s, 0, 4, prefix, 0.0, all);
    const auto best = *std::max_element(all.begin(), all.end(), [](const auto& a, const auto& b) {
      return a.score < b.score;
    });
    // A beam wide enough to hold every live prefix is exact.
    const auto beam = beam_search(s, 0, 64, 4);
    EXPECT_EQ(beam.tokens, best.tokens) << seed;
    EXPECT_NEAR(beam.score, best.score, 1e-12);
  }
}

TEST(BeamSearch, ReportedScoreIsSumOfStepLogProbs) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const TableScorer s{5, seed};
    const auto h = beam_search(s, 0, 3, 8);
    double total = 0.0;
    for (std::size_t i = 0; i < h.tokens.size(); ++i) {
      total += s(std::span<const int>(h.tokens).first(i))[static_cast<std::size_t>(h.tokens[i])];
    }
    EXPECT_NEAR(h.score, total, 1e-12);
    EXPECT_EQ(h.finished, h.tokens.back() == 0);
  }
}

TEST(BeamSearch, TiesPreferLexicographicallySmallerSequence) {
  auto flat = [](std::span<const int>) { return std::vector<double>(3, std::log(1.0 / 3.0)); };
  EXPECT_EQ(beam_search(flat, 0, 3, 4).tokens, (std::vector<int>{0}));
  auto no_eos = [](std::span<const int>) { return std::vector<double>{-1e9, std::log(0.5), std::log(0.5)}; };
  EXPECT_EQ(beam_search(no_eos, 0, 2, 3).tokens, (std::vector<int>{1, 1, 1}));
}

TEST(BeamSearch, ModelBeamOneEqualsGreedyOnCorpusContexts) {
  Fixture f(20);
  Parameters params = init_parameters(f.config(), 5);
  Rng rng(6);
  for (Parameter* p : params.all()) {
    for (auto& v : p->value.data()) v += rng.normal(0.0, 0.1);
  }
  for (std::size_t d = 0; d < 10; ++d) {
    ResponseScorer scorer(params, f.vocab, f.context(d, 2), f.policy);
    const auto beam = beam_search(scorer, kEos, 1, 8);
    const auto greedy = greedy_decode(scorer, kEos, 8);
    EXPECT_EQ(beam.tokens, greedy.tokens);
  }
}

// ---------------------------------------------------------------- losses

TEST(NllLoss, UniformLogitsGiveLogVocab) {
  Fixture f(10);
  Parameters params = init_parameters(f.config(), 1);
  params.token_embedding.value.fill(0.0);  // tied projection -> all logits 0
  const auto in = encode_generation(f.context(0, 2), f.corpus.dialogues[0].turns[2].text, f.vocab, f.policy);
  EXPECT_NEAR(nll_value(params, in), std::log(static_cast<double>(f.vocab.size())), 1e-12);
}

TEST(NllLoss, EmptyLabelSpanIsContractError) {
  Fixture f(10);
  Parameters params = init_parameters(f.config(), 1);
  Graph g;
  EXPECT_THROW(nll_loss(g, params, encode_generation(f.context(0, 2), std::nullopt, f.vocab, f.policy)), ContractError);
}

TEST(EmotionLoss, ClosedFormsAndAdditivity) {
  Fixture f(20);
  const TurnRef ref = first_meme_turn(f.corpus.dialogues);
  const Turn& target = target_of(f.corpus.dialogues, ref);
  const auto ctx = context_of(f.corpus.dialogues, ref);
  Parameters params = init_parameters(f.config(), 2);
  params.emotion_w.value.fill(0.0);
  params.token_embedding.value.fill(0.0);
  {
    Graph g;
    const auto in = encode_emotion(ctx, target, f.corpus.catalog, f.corpus.emotions, f.vocab, {true, false}, f.policy);
    const auto loss = emotion_loss(g, params, in, false);
    EXPECT_EQ(loss.total.id, loss.ce.id);
    EXPECT_FALSE(loss.mlm.has_value());
    EXPECT_NEAR(g.value(loss.ce).item(), std::log(8.0), 1e-12);
  }
  {
    Graph g;
    const auto in = encode_emotion(ctx, target, f.corpus.catalog, f.corpus.emotions, f.vocab, {true, true}, f.policy);
    ASSERT_EQ(in.mlm_positions.size(), 1u);
    const auto loss = emotion_loss(g, params, in, true);
    ASSERT_TRUE(loss.mlm.has_value());
    EXPECT_NEAR(g.value(*loss.mlm).item(), std::log(static_cast<double>(f.vocab.size())), 1e-12);
    EXPECT_EQ(g.value(loss.total).item(), g.value(loss.ce).item() + g.value(*loss.mlm).item());
  }
}

TEST(EmotionLoss, LabelOutsideClassesIsRejected) {
  Fixture f(20);
  const TurnRef ref = first_meme_turn(f.corpus.dialogues);
  auto in = encode_emotion(context_of(f.corpus.dialogues, ref), target_of(f.corpus.dialogues, ref), f.corpus.catalog,
                           f.corpus.emotions, f.vocab, {}, f.policy);
  in.emotion_label = 8;
  Parameters params = init_parameters(f.config(), 2);
  Graph g;
  try {
    emotion_loss(g, params, in, true);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("label"), std::string::npos);
  }
}

TEST(ClassifyEmotion, ZeroedHeadIsUniformInIdOrder) {
  Fixture f(20);
  const TurnRef ref = first_meme_turn(f.corpus.dialogues);
  const auto in = encode_emotion(context_of(f.corpus.dialogues, ref), target_of(f.corpus.dialogues, ref),
                                 f.corpus.catalog, f.corpus.emotions, f.vocab, {}, f.policy);
  Parameters params = init_parameters(f.config(), 2);
  params.emotion_w.value.fill(0.0);
  const auto top = classify_emotion(params, in, 8);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(top[i].first, static_cast<int>(i));
    EXPECT_NEAR(top[i].second, 1.0 / 8.0, 1e-15);
  }
  EXPECT_THROW(classify_emotion(params, in, 0), ContractError);
  EXPECT_THROW(classify_emotion(params, in, 9), ContractError);
}

TEST(ClassifyEmotion, FullListIsPermutationSortedByProbability) {
  Fixture f(20);
  const TurnRef ref = first_meme_turn(f.corpus.dialogues);
  const auto in = encode_emotion(context_of(f.corpus.dialogues, ref), target_of(f.corpus.dialogues, ref),
                                 f.corpus.catalog, f.corpus.emotions, f.vocab, {}, f.policy);
  Parameters params = init_parameters(f.config(), 4);
  for (auto& v : params.emotion_w.value.data()) v *= 50.0;
  const auto top = classify_emotion(params, in, 8);
  std::set<int> ids;
  double total = 0.0;
  for (std::size_t i = 0; i < top.size(); ++i) {
    ids.insert(top[i].first);
    total += top[i].second;
    if (i > 0) EXPECT_GE(top[i - 1].second, top[i].second);
  }
  EXPECT_EQ(ids.size(), 8u);
  EXPECT_NEAR(total, 1.0, 1e-12);
}

// ---------------------------------------------------------------- retrieval

struct RetrievalCase {
  Fixture f{20};
  TurnRef ref = first_meme_turn(f.corpus.dialogues);
  std::vector<MemeEntry> candidates;

  RetrievalCase() {
    for (int id : {7, 3, 12, 0, 25, 31, 18, 9, 2, 39}) candidates.push_back(f.corpus.catalog.at(id));
  }

  RankedCandidates run(const Parameters& params, std::span<const MemeEntry> cands) const {
    const Turn& target = target_of(f.corpus.dialogues, ref);
    return retrieve(params, f.vocab, f.corpus.catalog, context_of(f.corpus.dialogues, ref), target.text, cands,
                    f.policy);
  }
};

TEST(Retrieve, SingleCandidateIsTop) {
  RetrievalCase c;
  Parameters params = init_parameters(c.f.config(), 3);
  EXPECT_EQ(c.run(params, std::span<const MemeEntry>(c.candidates).first(1)).top(), 7);
  EXPECT_THROW(c.run(params, {}), ContractError);
}

TEST(Retrieve, ZeroedHeadTiesResolveByAscendingId) {
  RetrievalCase c;
  Parameters params = init_parameters(c.f.config(), 3);
  params.relevance_w.value.fill(0.0);
  const auto ranked = c.run(params, c.candidates);
  std::vector<int> order;
  for (const auto& [id, score] : ranked.entries) {
    order.push_back(id);
    EXPECT_EQ(score, 0.5);
  }
  EXPECT_EQ(order, (std::vector<int>{0, 2, 3, 7, 9, 12, 18, 25, 31, 39}));
}

TEST(Retrieve, OrderIndependentOfCandidatePermutation) {
  RetrievalCase c;
  Parameters params = init_parameters(c.f.config(), 8);
  for (auto& v : params.relevance_w.value.data()) v *= 100.0;
  const auto base = c.run(params, c.candidates);
  Rng rng(4);
  for (int i = 0; i < 5; ++i) {
    auto shuffled = c.candidates;
    rng.shuffle(shuffled);
    EXPECT_EQ(c.run(params, shuffled).entries, base.entries);
  }
  // A strictly increasing transform of every score keeps the arg-max.
  RankedCandidates transformed = base;
  for (auto& [id, s] : transformed.entries) s = std::log(s / (1.0 - s)) * 3.0 + 1.0;
  transformed.normalize();
  EXPECT_EQ(transformed.top(), base.top());
}

// ---------------------------------------------------------------- trainers

TEST(Trainers, GenerationLossDecreasesOver200Steps) {
  Fixture f(50, 12);
  Parameters params = init_parameters(f.config(), 12);
  GenerationTrainSetup setup{&f.corpus.dialogues, &f.vocab, f.policy};
  TrainOptions options;
  options.batch_size = 8;
  options.seed = 12;
  options.epochs = 1;
  options.adam.warmup_steps = 20;
  const std::size_t units = response_turns(f.corpus.dialogues).size();
  options.epochs = static_cast<int>((200 * options.batch_size + units - 1) / units);
  TrainResult result = train_generation(params, setup, options);
  ASSERT_GE(result.steps.size(), 200u);
  auto mean = [&](std::size_t begin, std::size_t end) {
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) s += result.steps[i].loss;
    return s / static_cast<double>(end - begin);
  };
  EXPECT_LT(mean(180, 200), mean(0, 20) - 0.5);
  EXPECT_LT(result.epoch_mean_loss.back(), result.epoch_mean_loss.front());
}

TEST(Trainers, RetrievalHingeDecreasesAcrossEpochs) {
  Fixture f(60, 4);
  Parameters params = init_parameters(f.config(24), 4);
  RetrievalTrainSetup setup;
  setup.dialogues = &f.corpus.dialogues;
  setup.catalog = &f.corpus.catalog;
  setup.vocab = &f.vocab;
  setup.policy = f.policy;
  setup.negative_pool = f.corpus.catalog.ids();
  TrainOptions options;
  options.epochs = 6;
  options.batch_size = 30;
  options.seed = 4;
  options.adam.base_lr = 3e-3;
  options.adam.warmup_steps = 20;
  const TrainResult result = train_retrieval(params, setup, options);
  ASSERT_EQ(result.epoch_mean_loss.size(), 6u);
  EXPECT_LT(result.epoch_mean_loss.back(), result.epoch_mean_loss.front());
}

TEST(Trainers, RenamingTrainsAndValidates) {
  Fixture f(60, 7);
  const auto pool = detail::rename_pool(f.vocab);
  ASSERT_EQ(pool.size(), f.vocab.size() - reserved_tokens().size());
  EXPECT_EQ(pool.front(), static_cast<int>(reserved_tokens().size()));
  EXPECT_EQ(pool.back(), static_cast<int>(f.vocab.size()) - 1);

  RetrievalTrainSetup setup;
  setup.dialogues = &f.corpus.dialogues;
  setup.catalog = &f.corpus.catalog;
  setup.vocab = &f.vocab;
  setup.policy = f.policy;
  setup.negative_pool = f.corpus.catalog.ids();
  setup.task.rename_prob = 1.0;
  TrainOptions options;
  options.epochs = 1;
  options.batch_size = 30;
  auto run = [&]() {
    Parameters params = init_parameters(f.config(), 7);
    return train_retrieval(params, setup, options);
  };
  const TrainResult a = run();
  ASSERT_FALSE(a.steps.empty());
  for (const auto& r : a.steps) EXPECT_TRUE(std::isfinite(r.loss));
  const TrainResult b = run();
  for (std::size_t i = 0; i < a.steps.size(); ++i) EXPECT_EQ(a.steps[i].loss, b.steps[i].loss);
  setup.task.rename_prob = 0.0;
  EXPECT_NE(run().steps.front().loss, a.steps.front().loss);
  setup.task.rename_prob = 1.5;
  EXPECT_THROW(run(), SpecError);
}

TEST(Trainers, StepLogRecordsWarmupSchedule) {
  Fixture f(10, 5);
  Parameters params = init_parameters(f.config(), 5);
  EmotionTrainSetup setup{&f.corpus.dialogues, &f.corpus.catalog, &f.corpus.emotions, &f.vocab, f.policy, {true, true}};
  TrainOptions options;
  options.epochs = 1;
  options.batch_size = 4;
  options.adam.warmup_steps = 4;
  std::vector<StepRecord> seen;
  options.on_step = [&](const StepRecord& r) { seen.push_back(r); };
  const TrainResult result = train_emotion(params, setup, options);
  ASSERT_EQ(seen.size(), result.steps.size());
  ASSERT_GE(seen.size(), 4u);
  for (std::size_t i = 0; i < seen.size(); ++i) {
    EXPECT_EQ(seen[i].step, static_cast<std::int64_t>(i + 1));
    EXPECT_DOUBLE_EQ(seen[i].lr, 1e-3 * std::min(1.0, static_cast<double>(i + 1) / 4.0));
    EXPECT_TRUE(std::isfinite(seen[i].loss));
  }
}

TEST(Trainers, ZeroEpochsLeavesParametersUntouched) {
  Fixture f(10, 5);
  Parameters params = init_parameters(f.config(), 5);
  const Parameters before = params;
  GenerationTrainSetup setup{&f.corpus.dialogues, &f.vocab, f.policy};
  TrainOptions options;
  options.epochs = 0;
  const TrainResult result = train_generation(params, setup, options);
  EXPECT_TRUE(result.steps.empty());
  EXPECT_EQ(params.token_embedding.value, before.token_embedding.value);
}

TEST(Trainers, SameSeedGivesBitwiseIdenticalParameters) {
  Fixture f(12, 6);
  auto run = [&]() {
    Parameters params = init_parameters(f.config(), 6);
    EmotionTrainSetup setup{&f.corpus.dialogues, &f.corpus.catalog, &f.corpus.emotions, &f.vocab, f.policy, {true, false}};
    TrainOptions options;
    options.epochs = 2;
    options.batch_size = 5;
    options.seed = 6;
    train_emotion(params, setup, options);
    return params;
  };
  const Parameters a = run();
  const Parameters b = run();
  const auto pa = a.all();
  const auto pb = b.all();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
}

TEST(GradientBuffer, SumsAcrossGraphs) {
  Fixture f(10, 5);
  Parameters params = init_parameters(f.config(), 5);
  GradientBuffer buffer(params);
  const auto in = encode_generation(f.context(0, 2), f.corpus.dialogues[0].turns[2].text, f.vocab, f.policy);
  Tensor single;
  for (int i = 0; i < 2; ++i) {
    Graph g;
    g.backward(nll_loss(g, params, in));
    buffer.accumulate(g);
    if (i == 0) single = buffer.grads()[0];
  }
  for (std::size_t j = 0; j < single.size(); ++j) EXPECT_DOUBLE_EQ(buffer.grads()[0][j], 2.0 * single[j]);
  buffer.zero();
  for (double v : buffer.grads()[0].data()) EXPECT_EQ(v, 0.0);
}

}  // namespace
}  // namespace memedial
