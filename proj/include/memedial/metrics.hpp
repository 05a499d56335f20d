// Copyright 2026 The memedial Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "memedial/errors.hpp"

namespace memedial {

using TokenList = std::vector<std::string>;

/// Candidates ordered by descending score, ties by ascending meme id.
struct RankedCandidates {
  std::vector<std::pair<int, double>> entries;  // (meme_id, p_matching)

  int top() const {
    if (entries.empty()) throw ContractError("empty ranking");
    return entries.front().first;
  }

  /// 1-based rank of `meme_id`; throws if absent.
  std::size_t rank_of(int meme_id) const {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].first == meme_id) return i + 1;
    }
    throw ContractError("ground-truth meme " + std::to_string(meme_id) + " missing from the candidate list");
  }

  /// Sorts in place by the ranking rule.
  void normalize() {
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
  }
};

namespace detail {

using NGramCounts = std::map<std::vector<std::string>, std::size_t>;

inline NGramCounts ngram_counts(const TokenList& tokens, std::size_t n) {
  NGramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace detail

/// Corpus-level BLEU-n (uniform weights, single reference, no smoothing).
/// Clipped n-gram matches and candidate n-gram totals are summed over the
/// corpus before taking precisions; any zero precision gives 0.
inline double bleu_n(const std::vector<TokenList>& candidates, const std::vector<TokenList>& references, int n) {
  if (candidates.size() != references.size()) {
    throw ContractError("bleu: " + std::to_string(candidates.size()) + " candidates vs " +
                        std::to_string(references.size()) + " references");
  }
  if (n < 1) throw ContractError("bleu order must be positive");
  std::vector<double> matched(static_cast<std::size_t>(n), 0.0), total(static_cast<std::size_t>(n), 0.0);
  double cand_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    cand_len += static_cast<double>(candidates[i].size());
    ref_len += static_cast<double>(references[i].size());
    for (int k = 1; k <= n; ++k) {
      const auto cand = detail::ngram_counts(candidates[i], static_cast<std::size_t>(k));
      const auto ref = detail::ngram_counts(references[i], static_cast<std::size_t>(k));
      for (const auto& [gram, c] : cand) {
        auto it = ref.find(gram);
        matched[static_cast<std::size_t>(k - 1)] += static_cast<double>(std::min(c, it == ref.end() ? 0 : it->second));
        total[static_cast<std::size_t>(k - 1)] += static_cast<double>(c);
      }
    }
  }
  double log_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    if (total[static_cast<std::size_t>(k)] == 0.0 || matched[static_cast<std::size_t>(k)] == 0.0) return 0.0;
    log_sum += std::log(matched[static_cast<std::size_t>(k)] / total[static_cast<std::size_t>(k)]);
  }
  const double brevity = cand_len < ref_len ? std::exp(1.0 - ref_len / cand_len) : 1.0;
  return brevity * std::exp(log_sum / static_cast<double>(n));
}

/// Distinct n-grams over all candidates divided by the total n-gram count.
inline double dist_n(const std::vector<TokenList>& candidates, int n) {
  if (n < 1) throw ContractError("dist order must be positive");
  std::set<std::vector<std::string>> unique;
  std::size_t total = 0;
  for (const auto& c : candidates) {
    for (const auto& [gram, count] : detail::ngram_counts(c, static_cast<std::size_t>(n))) {
      unique.insert(gram);
      total += count;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(unique.size()) / static_cast<double>(total);
}

inline void check_rankings(const std::vector<RankedCandidates>& rankings, const std::vector<int>& truths) {
  if (rankings.size() != truths.size()) {
    throw ContractError("ranking metrics: " + std::to_string(rankings.size()) + " rankings vs " +
                        std::to_string(truths.size()) + " truths");
  }
}

/// Fraction of queries whose truth ranks within the top k.
inline double recall_at_k(const std::vector<RankedCandidates>& rankings, const std::vector<int>& truths, std::size_t k) {
  check_rankings(rankings, truths);
  if (k < 1) throw ContractError("recall@k needs k >= 1");
  if (rankings.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < rankings.size(); ++i) hits += rankings[i].rank_of(truths[i]) <= k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

/// MAP with one relevant item per query, i.e. mean reciprocal rank.
inline double mean_average_precision(const std::vector<RankedCandidates>& rankings, const std::vector<int>& truths) {
  check_rankings(rankings, truths);
  if (rankings.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < rankings.size(); ++i) total += 1.0 / static_cast<double>(rankings[i].rank_of(truths[i]));
  return total / static_cast<double>(rankings.size());
}

inline double accuracy_at_k(const std::vector<std::vector<int>>& predictions, const std::vector<int>& truths,
                            std::size_t k) {
  if (predictions.size() != truths.size()) throw ContractError("accuracy@k: prediction/truth count mismatch");
  if (k < 1) throw ContractError("accuracy@k needs k >= 1");
  if (predictions.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].size() < k) {
      throw ContractError("accuracy@" + std::to_string(k) + ": prediction list " + std::to_string(i) + " has only " +
                          std::to_string(predictions[i].size()) + " entries");
    }
    hits += std::find(predictions[i].begin(), predictions[i].begin() + static_cast<std::ptrdiff_t>(k), truths[i]) !=
                    predictions[i].begin() + static_cast<std::ptrdiff_t>(k)
                ? 1
                : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

// ---------------------------------------------------------------- report

struct MetricsReport {
  int task = 0;
  std::string split;
  std::map<std::string, double> metrics;
  std::size_t n_examples = 0;
  std::uint64_t seed = 0;
  nlohmann::json metadata = nlohmann::json::object();

  static const std::vector<std::string>& metric_names(int task) {
    static const std::vector<std::string> t1 = {"bleu2", "bleu4", "dist1", "dist2"};
    static const std::vector<std::string> t2 = {"map", "recall_10@1", "recall_10@3", "recall_10@5"};
    static const std::vector<std::string> t3 = {"acc@1", "acc@3", "acc@5"};
    static const std::vector<std::string> none;
    switch (task) {
      case 1:
        return t1;
      case 2:
        return t2;
      case 3:
        return t3;
      default:
        return none;
    }
  }

  void validate() const {
    const auto& names = metric_names(task);
    if (names.empty()) throw ContractError("report task must be 1, 2 or 3");
    if (metrics.size() != names.size()) throw ContractError("report metric set does not match task");
    for (const auto& name : names) {
      auto it = metrics.find(name);
      if (it == metrics.end()) throw ContractError("report lacks metric " + name);
      if (!(it->second >= 0.0 && it->second <= 1.0)) throw ContractError("metric " + name + " outside [0, 1]");
    }
  }

  /// Keys are sorted (nlohmann::json object order), so output is stable.
  nlohmann::json to_json() const {
    validate();
    return {{"task", task},
            {"split", split},
            {"n_examples", n_examples},
            {"seed", seed},
            {"metrics", metrics},
            {"metadata", metadata}};
  }

  static MetricsReport from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.task = j.at("task").get<int>();
    r.split = j.at("split").get<std::string>();
    r.n_examples = j.at("n_examples").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.metrics = j.at("metrics").get<std::map<std::string, double>>();
    r.metadata = j.value("metadata", nlohmann::json::object());
    r.validate();
    return r;
  }
};

}  // namespace memedial
