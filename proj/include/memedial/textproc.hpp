// Copyright 2026 The memedial Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "memedial/corpus.hpp"
#include "memedial/errors.hpp"

namespace memedial {

enum ReservedToken : int { kPad = 0, kCls = 1, kSep = 2, kMask = 3, kUnk = 4, kBos = 5, kEos = 6 };

inline const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> tokens = {"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]", "[BOS]", "[EOS]"};
  return tokens;
}

/// Whitespace split with ASCII lowercasing.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

class Vocab {
 public:
  Vocab() : Vocab(reserved_tokens()) {}

  /// Tokens in id order; the first seven must be the reserved tokens.
  explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    const auto& reserved = reserved_tokens();
    if (tokens_.size() < reserved.size() || !std::equal(reserved.begin(), reserved.end(), tokens_.begin())) {
      throw ParseError("vocabulary must start with the reserved tokens", 1);
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) {
        throw ParseError("duplicate vocabulary token \"" + tokens_[i] + "\"", 1);
      }
    }
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  int id(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    return it == ids_.end() ? kUnk : it->second;
  }

  const std::string& token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw ContractError("vocab error: id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(tokens_.size()));
    }
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> out;
    for (const auto& t : tokenize(text)) out.push_back(id(t));
    return out;
  }

  /// Space-joined tokens; reserved tokens are skipped.
  std::string decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
      if (id < static_cast<int>(reserved_tokens().size())) continue;
      if (!out.empty()) out += ' ';
      out += token(id);
    }
    return out;
  }

  nlohmann::json to_json() const { return tokens_; }
  static Vocab from_json(const nlohmann::json& j) { return Vocab(j.get<std::vector<std::string>>()); }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// Vocabulary over every token of the corpus texts, meme titles, OCR texts
/// and emotion descriptions, ordered by frequency (descending) then
/// lexicographically.
inline Vocab build_vocab(const std::vector<Dialogue>& corpus, const MemeCatalog& catalog, const EmotionSet& emotions) {
  if (corpus.empty()) throw ContractError("build_vocab needs a non-empty corpus");
  std::map<std::string, std::size_t> counts;
  auto count = [&](std::string_view text) {
    for (auto& t : tokenize(text)) ++counts[t];
  };
  for (const auto& d : corpus) {
    for (const auto& t : d.turns) count(t.text);
  }
  for (const auto& m : catalog.entries()) {
    count(m.title);
    count(m.ocr_text);
  }
  for (const auto& e : emotions.entries()) count(e.description);

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = reserved_tokens();
  for (auto& [token, n] : ranked) {
    if (std::find(tokens.begin(), tokens.end(), token) == tokens.end()) tokens.push_back(token);
  }
  return Vocab(std::move(tokens));
}

// ---------------------------------------------------------------- model inputs

struct AttentionSpec {
  enum class Kind { full_bidirectional, prefix_lm };
  Kind kind = Kind::full_bidirectional;
  std::size_t prefix_len = 0;

  static AttentionSpec full() { return {}; }
  static AttentionSpec prefix_lm(std::size_t prefix_len) { return {Kind::prefix_lm, prefix_len}; }

  /// Whether query position i may attend to key position j.
  bool allows(std::size_t i, std::size_t j) const {
    if (kind == Kind::full_bidirectional) return true;
    if (i < prefix_len) return j < prefix_len;
    return j < prefix_len || j <= i;
  }

  friend bool operator==(const AttentionSpec&, const AttentionSpec&) = default;
};

struct SequenceInput {
  std::vector<int> token_ids;
  std::vector<int> segment_ids;
  std::vector<int> position_ids;
  AttentionSpec attention;

  /// Next-token targets: lm_labels[i] is the token at lm_label_positions[i],
  /// predicted from the hidden state one position earlier.
  std::vector<std::size_t> lm_label_positions;
  std::vector<int> lm_labels;

  std::vector<std::size_t> mlm_positions;
  std::vector<int> mlm_labels;

  std::optional<int> relevance_label;
  std::optional<int> emotion_label;

  std::size_t size() const noexcept { return token_ids.size(); }

  /// Throws ContractError if the parallel-list invariants do not hold.
  void validate(std::size_t max_len) const {
    const std::size_t n = token_ids.size();
    if (n == 0 || n > max_len) {
      throw ContractError("sequence length " + std::to_string(n) + " outside [1, " + std::to_string(max_len) + "]");
    }
    if (segment_ids.size() != n || position_ids.size() != n) throw ContractError("parallel id lists differ in length");
    for (std::size_t i = 0; i < n; ++i) {
      if (position_ids[i] != static_cast<int>(i)) throw ContractError("position ids must be 0..len-1");
    }
    if (attention.kind == AttentionSpec::Kind::prefix_lm && attention.prefix_len > n) {
      throw ContractError("prefix_len exceeds sequence length");
    }
    if (mlm_positions.size() != mlm_labels.size() || lm_label_positions.size() != lm_labels.size()) {
      throw ContractError("label lists differ in length from their positions");
    }
    for (auto p : mlm_positions) {
      if (p >= n) throw ContractError("mlm position " + std::to_string(p) + " out of range");
    }
    for (auto p : lm_label_positions) {
      if (p == 0 || p >= n) throw ContractError("lm label position " + std::to_string(p) + " out of range");
    }
  }
};

struct TruncationPolicy {
  std::size_t max_context_tokens = 256;
  std::size_t max_response_tokens = 128;

  std::size_t max_total() const noexcept { return max_context_tokens + max_response_tokens; }
  void validate() const {
    if (max_context_tokens < 2 || max_response_tokens < 4) {
      throw SpecError("truncation limits too small (need context >= 2, response >= 4)");
    }
  }
};

namespace detail {

inline void append(std::vector<int>& dst, const std::vector<int>& src) { dst.insert(dst.end(), src.begin(), src.end()); }

inline void keep_last(std::vector<int>& v, std::size_t n) {
  if (v.size() > n) v.erase(v.begin(), v.end() - static_cast<std::ptrdiff_t>(n));
}

inline void keep_first(std::vector<int>& v, std::size_t n) {
  if (v.size() > n) v.resize(n);
}

inline SequenceInput assemble(const std::vector<int>& first, const std::vector<int>& second, AttentionSpec attention) {
  SequenceInput in;
  in.token_ids = first;
  append(in.token_ids, second);
  in.segment_ids.assign(first.size(), 0);
  in.segment_ids.resize(in.token_ids.size(), 1);
  in.position_ids.resize(in.token_ids.size());
  for (std::size_t i = 0; i < in.position_ids.size(); ++i) in.position_ids[i] = static_cast<int>(i);
  in.attention = attention;
  return in;
}

}  // namespace detail

/// Prefix-LM input for response generation:
///   [BOS] u_1 [SEP] ... u_t [SEP] | response [EOS]
/// Memes and emotions in the context are ignored. The context side is
/// left-truncated to max_context_tokens (including [BOS]); the response side
/// is cut to max_response_tokens (including [EOS]). Without a response the
/// sequence ends at the final [SEP] and carries no labels.
inline SequenceInput encode_generation(std::span<const Turn> context, const std::optional<std::string>& response,
                                       const Vocab& vocab, const TruncationPolicy& policy = {}) {
  if (context.empty()) throw ContractError("encode_generation needs at least one context turn");
  std::vector<int> body;
  for (const Turn& t : context) {
    detail::append(body, vocab.encode(t.text));
    body.push_back(kSep);
  }
  detail::keep_last(body, policy.max_context_tokens - 1);
  std::vector<int> prefix{kBos};
  detail::append(prefix, body);

  std::vector<int> tail;
  if (response) {
    tail = vocab.encode(*response);
    detail::keep_first(tail, policy.max_response_tokens - 1);
    tail.push_back(kEos);
  }
  SequenceInput in = detail::assemble(prefix, tail, AttentionSpec::prefix_lm(prefix.size()));
  for (std::size_t i = prefix.size(); i < in.size(); ++i) {
    in.lm_label_positions.push_back(i);
    in.lm_labels.push_back(in.token_ids[i]);
  }
  return in;
}

/// Cross-encoder input for meme retrieval:
///   [CLS] context [SEP] response [SEP] title ocr [SEP]
/// Each context turn contributes its text plus the title of its meme, turns
/// separated by [SEP]. On overflow the context is left-truncated first, then
/// the candidate and finally the response are right-truncated; [CLS] stays.
inline SequenceInput encode_retrieval(std::span<const Turn> context, std::string_view response,
                                      const MemeEntry& candidate, const MemeCatalog& catalog, const Vocab& vocab,
                                      const TruncationPolicy& policy = {}, std::optional<int> label = std::nullopt) {
  std::vector<int> resp = vocab.encode(response);
  if (resp.empty()) throw ContractError("encode_retrieval needs a non-empty response");
  std::vector<int> ctx;
  for (const Turn& t : context) {
    detail::append(ctx, vocab.encode(t.text));
    if (t.meme_id) detail::append(ctx, vocab.encode(catalog.at(*t.meme_id).title));
    ctx.push_back(kSep);
  }
  detail::keep_last(ctx, policy.max_context_tokens);
  std::vector<int> cand = vocab.encode(candidate.title);
  detail::append(cand, vocab.encode(candidate.ocr_text));

  const std::size_t budget = policy.max_total();
  auto total = [&] { return 1 + ctx.size() + resp.size() + 1 + cand.size() + 1; };
  if (total() > budget) detail::keep_last(ctx, ctx.size() - std::min(ctx.size(), total() - budget));
  if (total() > budget) detail::keep_first(cand, cand.size() - std::min(cand.size(), total() - budget));
  if (total() > budget) detail::keep_first(resp, resp.size() - std::min(resp.size() - 1, total() - budget));

  std::vector<int> first{kCls};
  detail::append(first, ctx);
  std::vector<int> second = resp;
  second.push_back(kSep);
  detail::append(second, cand);
  second.push_back(kSep);
  SequenceInput in = detail::assemble(first, second, AttentionSpec::full());
  in.relevance_label = label;
  return in;
}

/// Flags for the emotion classifier's input layout.
struct EmotionFeatures {
  bool use_ef = true;   // emotion descriptions of past meme turns in the context
  bool use_edp = true;  // masked description of the response emotion, recovered by the MLM head
};

/// Classifier input for meme emotion:
///   [CLS] (u_i [SEP] title_i ocr_i [SEP] desc(e_i) [SEP])* u [SEP] title ocr [SEP] [MASK].. [SEP]
/// The meme and description parts of a context turn appear only when it
/// carries a meme; descriptions only with use_ef. The trailing masked
/// description only with use_edp, in which case mlm_labels hold its true ids.
inline SequenceInput encode_emotion(std::span<const Turn> context, const Turn& response, const MemeCatalog& catalog,
                                    const EmotionSet& emotions, const Vocab& vocab, EmotionFeatures features,
                                    const TruncationPolicy& policy = {}) {
  if (!response.meme_id || !response.emotion_id) {
    throw ContractError("encode_emotion needs a response turn carrying a meme and its emotion");
  }
  auto meme_tokens = [&](int meme_id) {
    const MemeEntry& m = catalog.at(meme_id);
    std::vector<int> out = vocab.encode(m.title);
    detail::append(out, vocab.encode(m.ocr_text));
    return out;
  };

  std::vector<int> ctx;
  for (const Turn& t : context) {
    detail::append(ctx, vocab.encode(t.text));
    ctx.push_back(kSep);
    if (t.meme_id) {
      detail::append(ctx, meme_tokens(*t.meme_id));
      ctx.push_back(kSep);
      if (features.use_ef && t.emotion_id) {
        detail::append(ctx, vocab.encode(emotions.at(*t.emotion_id).description));
        ctx.push_back(kSep);
      }
    }
  }
  detail::keep_last(ctx, policy.max_context_tokens - 1);  // [CLS] counts toward the context side

  std::vector<int> utterance = vocab.encode(response.text);
  std::vector<int> meme = meme_tokens(*response.meme_id);
  const std::vector<int> description = vocab.encode(emotions.at(*response.emotion_id).description);
  const std::size_t tail_fixed = 2 + (features.use_edp ? description.size() + 1 : 0);
  if (utterance.size() + meme.size() + tail_fixed > policy.max_response_tokens) {
    const std::size_t room = policy.max_response_tokens > tail_fixed ? policy.max_response_tokens - tail_fixed : 0;
    detail::keep_first(meme, std::min(meme.size(), room));
    detail::keep_first(utterance, room - meme.size());
  }

  std::vector<int> first{kCls};
  detail::append(first, ctx);
  std::vector<int> second = utterance;
  second.push_back(kSep);
  detail::append(second, meme);
  second.push_back(kSep);
  std::vector<std::size_t> masked;
  if (features.use_edp) {
    for (std::size_t i = 0; i < description.size(); ++i) {
      masked.push_back(first.size() + second.size());
      second.push_back(kMask);
    }
    second.push_back(kSep);
  }
  SequenceInput in = detail::assemble(first, second, AttentionSpec::full());
  in.mlm_positions = std::move(masked);
  if (features.use_edp) in.mlm_labels = description;
  in.emotion_label = *response.emotion_id;
  return in;
}

}  // namespace memedial
