// Copyright 2026 The memedial Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "memedial/errors.hpp"
#include "memedial/rng.hpp"

namespace memedial {

struct MemeEntry {
  int meme_id = 0;
  std::string title;
  std::string ocr_text;

  friend bool operator==(const MemeEntry&, const MemeEntry&) = default;
};

struct EmotionEntry {
  int emotion_id = 0;
  std::string description;

  friend bool operator==(const EmotionEntry&, const EmotionEntry&) = default;
};

enum class Speaker { A, B };

struct Turn {
  Speaker speaker = Speaker::A;
  std::string text;
  std::optional<int> meme_id;
  std::optional<int> emotion_id;

  bool has_meme() const noexcept { return meme_id.has_value(); }
  friend bool operator==(const Turn&, const Turn&) = default;
};

struct Dialogue {
  std::string dialogue_id;
  std::vector<Turn> turns;

  bool references_any(const std::set<int>& meme_ids) const {
    return std::any_of(turns.begin(), turns.end(),
                       [&](const Turn& t) { return t.meme_id && meme_ids.count(*t.meme_id); });
  }
  friend bool operator==(const Dialogue&, const Dialogue&) = default;
};

/// The meme set, indexed by id.
class MemeCatalog {
 public:
  MemeCatalog() = default;
  explicit MemeCatalog(std::vector<MemeEntry> entries) : entries_(std::move(entries)) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e = entries_[i];
      if (e.meme_id < 0) throw ReferenceError("negative meme_id " + std::to_string(e.meme_id));
      if (e.title.empty()) throw SpecError("meme " + std::to_string(e.meme_id) + " has an empty title");
      if (!index_.emplace(e.meme_id, i).second) throw SpecError("duplicate meme_id " + std::to_string(e.meme_id));
    }
  }

  const std::vector<MemeEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool contains(int id) const { return index_.count(id) > 0; }

  const MemeEntry& at(int id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ReferenceError("unknown meme_id " + std::to_string(id));
    return entries_[it->second];
  }

  std::vector<int> ids() const {
    std::vector<int> out;
    for (const auto& e : entries_) out.push_back(e.meme_id);
    return out;
  }

  friend bool operator==(const MemeCatalog& a, const MemeCatalog& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<MemeEntry> entries_;
  std::map<int, std::size_t> index_;
};

class EmotionSet {
 public:
  EmotionSet() = default;
  explicit EmotionSet(std::vector<EmotionEntry> entries) : entries_(std::move(entries)) {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e = entries_[i];
      if (e.emotion_id < 0 || static_cast<std::size_t>(e.emotion_id) >= entries_.size()) {
        throw SpecError("emotion_id " + std::to_string(e.emotion_id) + " outside [0, " +
                        std::to_string(entries_.size()) + ")");
      }
      if (e.description.empty()) throw SpecError("emotion " + std::to_string(e.emotion_id) + " has no description");
      if (!seen.insert(e.description).second) throw SpecError("duplicate emotion description " + e.description);
      if (!index_.emplace(e.emotion_id, i).second) {
        throw SpecError("duplicate emotion_id " + std::to_string(e.emotion_id));
      }
    }
  }

  const std::vector<EmotionEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool contains(int id) const { return index_.count(id) > 0; }

  const EmotionEntry& at(int id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ReferenceError("unknown emotion_id " + std::to_string(id));
    return entries_[it->second];
  }

  friend bool operator==(const EmotionSet& a, const EmotionSet& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<EmotionEntry> entries_;
  std::map<int, std::size_t> index_;
};

/// Train / seen-validation / unseen-validation partition around a set of
/// held-out memes.
struct CorpusSplit {
  std::vector<Dialogue> train;
  std::vector<Dialogue> valid_seen;
  std::vector<Dialogue> valid_unseen;
  std::set<int> held_out_memes;
};

// ---------------------------------------------------------------- validation

/// Throws if the dialogue breaks a structural invariant or references an
/// unknown meme/emotion.
inline void validate_dialogue(const Dialogue& d, const MemeCatalog& catalog, const EmotionSet& emotions) {
  if (d.turns.size() < 2) throw SpecError("dialogue " + d.dialogue_id + " has fewer than 2 turns");
  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    const Turn& t = d.turns[i];
    if (i > 0 && t.speaker == d.turns[i - 1].speaker) {
      throw SpecError("dialogue " + d.dialogue_id + ": speakers do not alternate at turn " + std::to_string(i));
    }
    if (t.meme_id.has_value() != t.emotion_id.has_value()) {
      throw SpecError("dialogue " + d.dialogue_id + ": turn " + std::to_string(i) +
                      " must carry both a meme and an emotion or neither");
    }
    if (t.meme_id && !catalog.contains(*t.meme_id)) {
      throw ReferenceError("meme_id " + std::to_string(*t.meme_id) + " in dialogue " + d.dialogue_id);
    }
    if (t.emotion_id && !emotions.contains(*t.emotion_id)) {
      throw ReferenceError("emotion_id " + std::to_string(*t.emotion_id) + " in dialogue " + d.dialogue_id);
    }
  }
}

// ---------------------------------------------------------------- JSON

inline nlohmann::ordered_json dialogue_to_json(const Dialogue& d) {
  nlohmann::ordered_json turns = nlohmann::ordered_json::array();
  for (const Turn& t : d.turns) {
    nlohmann::ordered_json jt;
    jt["speaker"] = t.speaker == Speaker::A ? "A" : "B";
    jt["text"] = t.text;
    jt["meme_id"] = t.meme_id ? nlohmann::ordered_json(*t.meme_id) : nlohmann::ordered_json(nullptr);
    jt["emotion_id"] = t.emotion_id ? nlohmann::ordered_json(*t.emotion_id) : nlohmann::ordered_json(nullptr);
    turns.push_back(std::move(jt));
  }
  nlohmann::ordered_json out;
  out["dialogue_id"] = d.dialogue_id;
  out["turns"] = std::move(turns);
  return out;
}

inline Dialogue dialogue_from_json(const nlohmann::json& j) {
  Dialogue d;
  d.dialogue_id = j.at("dialogue_id").get<std::string>();
  for (const auto& jt : j.at("turns")) {
    Turn t;
    const auto speaker = jt.at("speaker").get<std::string>();
    if (speaker == "A") {
      t.speaker = Speaker::A;
    } else if (speaker == "B") {
      t.speaker = Speaker::B;
    } else {
      throw std::invalid_argument("speaker must be \"A\" or \"B\", got \"" + speaker + "\"");
    }
    t.text = jt.at("text").get<std::string>();
    if (jt.contains("meme_id") && !jt["meme_id"].is_null()) t.meme_id = jt["meme_id"].get<int>();
    if (jt.contains("emotion_id") && !jt["emotion_id"].is_null()) t.emotion_id = jt["emotion_id"].get<int>();
    d.turns.push_back(std::move(t));
  }
  return d;
}

/// Parses JSON-lines corpus text. Blank lines are skipped.
inline std::vector<Dialogue> parse_corpus(std::istream& in, const MemeCatalog& catalog, const EmotionSet& emotions) {
  std::vector<Dialogue> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Dialogue d;
    try {
      d = dialogue_from_json(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), line_no);
    } catch (const std::invalid_argument& e) {
      throw ParseError(e.what(), line_no);
    }
    try {
      validate_dialogue(d, catalog, emotions);
    } catch (const ReferenceError& e) {
      throw ReferenceError(e.detail() + " (line " + std::to_string(line_no) + ")");
    } catch (const SpecError& e) {
      throw ParseError(e.what(), line_no);
    }
    out.push_back(std::move(d));
  }
  return out;
}

inline std::vector<Dialogue> load_corpus(const std::filesystem::path& path, const MemeCatalog& catalog,
                                         const EmotionSet& emotions) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return parse_corpus(in, catalog, emotions);
}

inline void write_corpus(std::ostream& out, const std::vector<Dialogue>& dialogues) {
  for (const auto& d : dialogues) out << dialogue_to_json(d).dump() << '\n';
}

inline void write_corpus(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_corpus(out, dialogues);
}

inline nlohmann::ordered_json catalog_to_json(const MemeCatalog& catalog) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& e : catalog.entries()) {
    nlohmann::ordered_json j;
    j["meme_id"] = e.meme_id;
    j["title"] = e.title;
    j["ocr_text"] = e.ocr_text;
    arr.push_back(std::move(j));
  }
  return arr;
}

inline MemeCatalog catalog_from_json(const nlohmann::json& arr) {
  std::vector<MemeEntry> entries;
  try {
    for (const auto& j : arr) {
      entries.push_back({j.at("meme_id").get<int>(), j.at("title").get<std::string>(),
                         j.value("ocr_text", std::string())});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("catalog: ") + e.what(), 1);
  }
  return MemeCatalog(std::move(entries));
}

inline nlohmann::ordered_json emotions_to_json(const EmotionSet& emotions) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& e : emotions.entries()) {
    nlohmann::ordered_json j;
    j["emotion_id"] = e.emotion_id;
    j["description"] = e.description;
    arr.push_back(std::move(j));
  }
  return arr;
}

inline EmotionSet emotions_from_json(const nlohmann::json& arr) {
  std::vector<EmotionEntry> entries;
  try {
    for (const auto& j : arr) entries.push_back({j.at("emotion_id").get<int>(), j.at("description").get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("emotion set: ") + e.what(), 1);
  }
  return EmotionSet(std::move(entries));
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), 1);
  }
}

template <typename Json>
void write_json_file(const std::filesystem::path& path, const Json& doc, int indent = 2) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(indent) << '\n';
  if (!out) throw IoError("short write to " + path.string());
}

inline MemeCatalog load_catalog(const std::filesystem::path& path) { return catalog_from_json(read_json_file(path)); }
inline EmotionSet load_emotions(const std::filesystem::path& path) { return emotions_from_json(read_json_file(path)); }

// ---------------------------------------------------------------- generator

struct GeneratorSpec {
  int n_dialogues = 2000;
  int n_memes = 40;
  int n_emotions = 8;
  int min_turns = 4;
  int max_turns = 10;
  double meme_rate = 0.5;
  /// Probability that consecutive meme-bearing turns keep the same emotion.
  double stay_probability = 0.6;
  /// Probability that a meme-bearing turn draws its meme from the memes
  /// assigned to the turn's emotion; otherwise it draws from the whole catalog.
  double meme_fidelity = 0.3;
  int min_filler = 3;
  int max_filler = 8;
};

struct SyntheticCorpus {
  MemeCatalog catalog;
  EmotionSet emotions;
  std::vector<Dialogue> dialogues;
  /// Emotion each meme was built around (its OCR text carries that description).
  std::vector<int> meme_emotion;
  /// Keyword of each meme, by meme id.
  std::vector<std::string> meme_keyword;
};

namespace detail {

inline const std::vector<std::string>& emotion_words() {
  static const std::vector<std::string> words = {"happy", "sad",   "angry",    "surprised", "afraid", "disgusted",
                                                 "calm",  "proud", "confused", "bored",     "shy",    "excited"};
  return words;
}

inline const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words = {
      "the",   "a",     "you",   "i",     "we",    "it",    "is",    "was",   "are",   "so",    "really",
      "just",  "that",  "this",  "what",  "how",   "why",   "when",  "today", "now",   "then",  "good",
      "bad",   "time",  "day",   "night", "work",  "home",  "food",  "game",  "movie", "music", "friend",
      "think", "know",  "like",  "want",  "see",   "go",    "come",  "do",    "make",  "say",   "get",
      "more",  "very",  "too",   "well",  "yes",   "no",    "maybe", "sure",  "right", "still", "again",
      "here",  "there", "about", "with",  "for",   "and",   "but",   "of",    "to"};
  return words;
}

inline const std::vector<std::string>& title_nouns() {
  static const std::vector<std::string> words = {"cat", "dog", "frog", "panda", "bear", "baby", "duck", "fox"};
  return words;
}

inline const std::vector<std::string>& syllables() {
  static const std::vector<std::string> s = {"ba", "ko", "ri", "mu", "ze", "ta", "lo", "ni", "pe", "su",
                                             "ga", "do", "fi", "ju", "ke", "vo", "xa", "yi", "wu", "qe"};
  return s;
}

}  // namespace detail

/// Deterministic synthetic MOD-style corpus.
///
/// Emotions follow a first-order Markov chain over the meme-bearing turns of a
/// dialogue: the first draw is uniform, then each step keeps the previous
/// emotion with `stay_probability` and otherwise moves uniformly to one of the
/// other emotions. Each meme has one emotion and a unique keyword; a
/// meme-bearing turn contains its meme's keyword among 3-8 filler tokens.
inline SyntheticCorpus generate_synthetic(const GeneratorSpec& spec, std::uint64_t seed) {
  if (spec.n_dialogues <= 0 || spec.n_memes <= 0 || spec.n_emotions <= 0) {
    throw SpecError("n_dialogues, n_memes and n_emotions must be positive");
  }
  if (spec.n_memes < spec.n_emotions) {
    throw SpecError("n_memes (" + std::to_string(spec.n_memes) + ") < n_emotions (" +
                    std::to_string(spec.n_emotions) + "): some emotion would have no meme");
  }
  if (spec.min_turns < 2 || spec.min_turns > spec.max_turns) throw SpecError("turn range must satisfy 2 <= min <= max");
  if (spec.min_filler < 0 || spec.min_filler > spec.max_filler) throw SpecError("bad filler range");

  Rng rng(seed);
  SyntheticCorpus out;

  std::vector<EmotionEntry> emotions;
  for (int e = 0; e < spec.n_emotions; ++e) {
    const auto& words = detail::emotion_words();
    emotions.push_back({e, e < static_cast<int>(words.size()) ? words[e] : "emotion" + std::to_string(e)});
  }
  out.emotions = EmotionSet(emotions);

  // Unique three-syllable keywords.
  std::set<std::string> used;
  const auto& syl = detail::syllables();
  while (static_cast<int>(out.meme_keyword.size()) < spec.n_memes) {
    std::string word = syl[rng.below(syl.size())] + syl[rng.below(syl.size())] + syl[rng.below(syl.size())];
    if (used.insert(word).second) out.meme_keyword.push_back(word);
  }

  std::vector<MemeEntry> memes;
  std::vector<std::vector<int>> memes_by_emotion(static_cast<std::size_t>(spec.n_emotions));
  for (int m = 0; m < spec.n_memes; ++m) {
    const int emotion = m < spec.n_emotions ? m : static_cast<int>(rng.below(static_cast<std::size_t>(spec.n_emotions)));
    out.meme_emotion.push_back(emotion);
    memes_by_emotion[static_cast<std::size_t>(emotion)].push_back(m);
    const auto& nouns = detail::title_nouns();
    const std::string& keyword = out.meme_keyword[static_cast<std::size_t>(m)];
    memes.push_back({m, keyword + " " + nouns[rng.below(nouns.size())],
                     keyword + " " + emotions[static_cast<std::size_t>(emotion)].description});
  }
  out.catalog = MemeCatalog(memes);

  const auto& fillers = detail::filler_words();
  const int width = static_cast<int>(std::to_string(spec.n_dialogues - 1).size());
  for (int di = 0; di < spec.n_dialogues; ++di) {
    Dialogue d;
    std::string id = std::to_string(di);
    d.dialogue_id = "d" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;
    const int n_turns = rng.between(spec.min_turns, spec.max_turns);
    std::optional<int> emotion;
    for (int ti = 0; ti < n_turns; ++ti) {
      Turn t;
      t.speaker = ti % 2 == 0 ? Speaker::A : Speaker::B;
      std::vector<std::string> words;
      const int n_filler = rng.between(spec.min_filler, spec.max_filler);
      for (int w = 0; w < n_filler; ++w) words.push_back(fillers[rng.below(fillers.size())]);
      if (rng.bernoulli(spec.meme_rate)) {
        if (!emotion) {
          emotion = static_cast<int>(rng.below(static_cast<std::size_t>(spec.n_emotions)));
        } else if (spec.n_emotions > 1 && !rng.bernoulli(spec.stay_probability)) {
          int next = static_cast<int>(rng.below(static_cast<std::size_t>(spec.n_emotions - 1)));
          if (next >= *emotion) ++next;
          emotion = next;
        }
        int meme = 0;
        if (rng.bernoulli(spec.meme_fidelity)) {
          const auto& pool = memes_by_emotion[static_cast<std::size_t>(*emotion)];
          meme = pool[rng.below(pool.size())];
        } else {
          meme = static_cast<int>(rng.below(static_cast<std::size_t>(spec.n_memes)));
        }
        t.meme_id = meme;
        t.emotion_id = *emotion;
        const std::size_t slot = rng.below(words.size() + 1);
        words.insert(words.begin() + static_cast<std::ptrdiff_t>(slot), out.meme_keyword[static_cast<std::size_t>(meme)]);
      }
      std::string text;
      for (std::size_t w = 0; w < words.size(); ++w) text += (w ? " " : "") + words[w];
      t.text = text;
      d.turns.push_back(std::move(t));
    }
    out.dialogues.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------- split

/// Holds out `n_unseen` memes, reserves `valid_fraction` of the dialogues for
/// validation, and drops every training dialogue that references a held-out
/// meme. Validation dialogues go to valid_unseen when they reference a
/// held-out meme and to valid_seen otherwise.
inline CorpusSplit make_split(const std::vector<Dialogue>& dialogues, const MemeCatalog& catalog, int n_unseen,
                              std::uint64_t seed, double valid_fraction = 0.2) {
  if (n_unseen < 0 || static_cast<std::size_t>(n_unseen) >= catalog.size()) {
    throw SpecError("n_unseen must be in [0, catalog size), got " + std::to_string(n_unseen) + " for " +
                    std::to_string(catalog.size()) + " memes");
  }
  if (valid_fraction < 0.0 || valid_fraction >= 1.0) throw SpecError("valid_fraction must be in [0, 1)");
  Rng rng(seed);
  CorpusSplit split;
  const auto ids = catalog.ids();
  for (auto i : rng.sample_indices(ids.size(), static_cast<std::size_t>(n_unseen))) split.held_out_memes.insert(ids[i]);

  std::vector<std::size_t> order(dialogues.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  const auto n_valid = static_cast<std::size_t>(valid_fraction * static_cast<double>(dialogues.size()) + 0.5);
  std::vector<bool> is_valid(dialogues.size(), false);
  for (std::size_t i = 0; i < n_valid; ++i) is_valid[order[i]] = true;

  // File order is kept inside each part.
  for (std::size_t i = 0; i < dialogues.size(); ++i) {
    const bool tainted = dialogues[i].references_any(split.held_out_memes);
    if (is_valid[i]) {
      (tainted ? split.valid_unseen : split.valid_seen).push_back(dialogues[i]);
    } else if (!tainted) {
      split.train.push_back(dialogues[i]);
    }
  }
  return split;
}

inline nlohmann::ordered_json split_to_json(const CorpusSplit& split, std::uint64_t seed) {
  auto ids = [](const std::vector<Dialogue>& ds) {
    std::vector<std::string> out;
    for (const auto& d : ds) out.push_back(d.dialogue_id);
    return out;
  };
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["held_out_memes"] = std::vector<int>(split.held_out_memes.begin(), split.held_out_memes.end());
  j["train"] = ids(split.train);
  j["valid_seen"] = ids(split.valid_seen);
  j["valid_unseen"] = ids(split.valid_unseen);
  return j;
}

/// Rebuilds a split from its id lists against the full corpus.
inline CorpusSplit split_from_json(const nlohmann::json& j, const std::vector<Dialogue>& dialogues) {
  std::map<std::string, const Dialogue*> by_id;
  for (const auto& d : dialogues) by_id.emplace(d.dialogue_id, &d);
  CorpusSplit split;
  auto resolve = [&](const char* key, std::vector<Dialogue>& dst) {
    for (const auto& id : j.at(key)) {
      auto it = by_id.find(id.get<std::string>());
      if (it == by_id.end()) throw ReferenceError("split lists unknown dialogue " + id.get<std::string>());
      dst.push_back(*it->second);
    }
  };
  try {
    for (int m : j.at("held_out_memes").get<std::vector<int>>()) split.held_out_memes.insert(m);
    resolve("train", split.train);
    resolve("valid_seen", split.valid_seen);
    resolve("valid_unseen", split.valid_unseen);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("split: ") + e.what(), 1);
  }
  return split;
}

}  // namespace memedial
