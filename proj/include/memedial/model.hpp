// Copyright 2026 The memedial Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "memedial/checkpoint.hpp"
#include "memedial/errors.hpp"
#include "memedial/rng.hpp"
#include "memedial/tensor.hpp"
#include "memedial/textproc.hpp"

namespace memedial {

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 64;
  int d_ff = 256;
  int vocab_size = 0;
  int n_segments = 2;
  int max_positions = 384;
  int n_emotions = 8;

  void validate() const {
    if (n_layers <= 0 || n_heads <= 0 || d_model <= 0 || d_ff <= 0 || vocab_size <= 0 || n_segments <= 0 ||
        max_positions <= 0 || n_emotions <= 0) {
      throw SpecError("model config fields must be positive");
    }
    if (d_model % n_heads != 0) {
      throw SpecError("d_model (" + std::to_string(d_model) + ") not divisible by n_heads (" +
                      std::to_string(n_heads) + ")");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"n_layers", c.n_layers},     {"n_heads", c.n_heads},       {"d_model", c.d_model},
       {"d_ff", c.d_ff},             {"vocab_size", c.vocab_size}, {"n_segments", c.n_segments},
       {"max_positions", c.max_positions}, {"n_emotions", c.n_emotions}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.n_segments = j.at("n_segments").get<int>();
  c.max_positions = j.at("max_positions").get<int>();
  c.n_emotions = j.at("n_emotions").get<int>();
}

struct LayerParameters {
  Parameter ln1_gamma, ln1_beta;
  Parameter w_query, b_query, w_key, b_key, w_value, b_value, w_out, b_out;
  Parameter ln2_gamma, ln2_beta;
  Parameter w_ff1, b_ff1, w_ff2, b_ff2;
};

/// All trainable tensors. The token table doubles as the LM/MLM output
/// projection.
struct Parameters {
  ModelConfig config;
  Parameter token_embedding, segment_embedding, position_embedding;
  std::vector<LayerParameters> layers;
  Parameter final_gamma, final_beta;
  Parameter relevance_w, relevance_b;
  Parameter emotion_w, emotion_b;

  /// Fixed enumeration order; pointers are invalidated if *this moves.
  std::vector<Parameter*> all() {
    std::vector<Parameter*> out{&token_embedding, &segment_embedding, &position_embedding};
    for (auto& l : layers) {
      for (Parameter* p : {&l.ln1_gamma, &l.ln1_beta, &l.w_query, &l.b_query, &l.w_key, &l.b_key, &l.w_value,
                           &l.b_value, &l.w_out, &l.b_out, &l.ln2_gamma, &l.ln2_beta, &l.w_ff1, &l.b_ff1, &l.w_ff2,
                           &l.b_ff2}) {
        out.push_back(p);
      }
    }
    for (Parameter* p : {&final_gamma, &final_beta, &relevance_w, &relevance_b, &emotion_w, &emotion_b}) out.push_back(p);
    return out;
  }

  std::vector<const Parameter*> all() const {
    auto ptrs = const_cast<Parameters*>(this)->all();
    return {ptrs.begin(), ptrs.end()};
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const Parameter* p : all()) n += p->value.size();
    return n;
  }
};

/// N(0, 0.02^2) weights, zero biases, unit layer-norm gains.
inline Parameters init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto ff = static_cast<std::size_t>(config.d_ff);
  auto normal = [&](std::string name, Shape shape) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.normal(0.0, 0.02);
    return Parameter{std::move(name), std::move(t)};
  };
  auto constant = [](std::string name, Shape shape, double value) {
    return Parameter{std::move(name), Tensor(std::move(shape), value)};
  };

  Parameters p;
  p.config = config;
  p.token_embedding = normal("embed.token", {static_cast<std::size_t>(config.vocab_size), d});
  p.segment_embedding = normal("embed.segment", {static_cast<std::size_t>(config.n_segments), d});
  p.position_embedding = normal("embed.position", {static_cast<std::size_t>(config.max_positions), d});
  for (int i = 0; i < config.n_layers; ++i) {
    const std::string prefix = "layer" + std::to_string(i) + ".";
    LayerParameters l;
    l.ln1_gamma = constant(prefix + "ln1.gamma", {d}, 1.0);
    l.ln1_beta = constant(prefix + "ln1.beta", {d}, 0.0);
    l.w_query = normal(prefix + "attn.w_query", {d, d});
    l.b_query = constant(prefix + "attn.b_query", {d}, 0.0);
    l.w_key = normal(prefix + "attn.w_key", {d, d});
    l.b_key = constant(prefix + "attn.b_key", {d}, 0.0);
    l.w_value = normal(prefix + "attn.w_value", {d, d});
    l.b_value = constant(prefix + "attn.b_value", {d}, 0.0);
    l.w_out = normal(prefix + "attn.w_out", {d, d});
    l.b_out = constant(prefix + "attn.b_out", {d}, 0.0);
    l.ln2_gamma = constant(prefix + "ln2.gamma", {d}, 1.0);
    l.ln2_beta = constant(prefix + "ln2.beta", {d}, 0.0);
    l.w_ff1 = normal(prefix + "ffn.w1", {d, ff});
    l.b_ff1 = constant(prefix + "ffn.b1", {ff}, 0.0);
    l.w_ff2 = normal(prefix + "ffn.w2", {ff, d});
    l.b_ff2 = constant(prefix + "ffn.b2", {d}, 0.0);
    p.layers.push_back(std::move(l));
  }
  p.final_gamma = constant("final_ln.gamma", {d}, 1.0);
  p.final_beta = constant("final_ln.beta", {d}, 0.0);
  p.relevance_w = normal("head.relevance.w", {d, 1});
  p.relevance_b = constant("head.relevance.b", {1}, 0.0);
  p.emotion_w = normal("head.emotion.w", {d, static_cast<std::size_t>(config.n_emotions)});
  p.emotion_b = constant("head.emotion.b", {static_cast<std::size_t>(config.n_emotions)}, 0.0);
  return p;
}

/// Row-major [len x len] mask; 1 marks a blocked (query, key) pair.
inline std::vector<std::uint8_t> attention_block_mask(const AttentionSpec& spec, std::size_t len) {
  std::vector<std::uint8_t> mask(len * len, 0);
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t j = 0; j < len; ++j) mask[i * len + j] = spec.allows(i, j) ? 0 : 1;
  }
  return mask;
}

/// Optional capture of per-layer, per-head attention probabilities.
struct AttentionTrace {
  std::vector<Tensor> probabilities;  // layer-major, then head
};

/// Token + segment + position embeddings followed by pre-norm transformer
/// blocks and a final layer norm. Returns hidden states [len x d_model].
inline Var encode(Graph& g, const Parameters& params, const SequenceInput& input, AttentionTrace* trace = nullptr) {
  const ModelConfig& cfg = params.config;
  input.validate(static_cast<std::size_t>(cfg.max_positions));
  for (int id : input.token_ids) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw ContractError("vocab error: token id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(cfg.vocab_size));
    }
  }
  const std::size_t len = input.size();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto head_dim = d / static_cast<std::size_t>(cfg.n_heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Var x = g.embedding_lookup(g.param(params.token_embedding), input.token_ids);
  x = g.add(x, g.embedding_lookup(g.param(params.segment_embedding), input.segment_ids));
  x = g.add(x, g.embedding_lookup(g.param(params.position_embedding), input.position_ids));

  const auto blocked = attention_block_mask(input.attention, len);
  const bool any_blocked = std::find(blocked.begin(), blocked.end(), 1) != blocked.end();

  for (const LayerParameters& layer : params.layers) {
    Var h = g.layer_norm(x, g.param(layer.ln1_gamma), g.param(layer.ln1_beta));
    Var q = g.add(g.matmul(h, g.param(layer.w_query)), g.param(layer.b_query));
    Var k = g.add(g.matmul(h, g.param(layer.w_key)), g.param(layer.b_key));
    Var v = g.add(g.matmul(h, g.param(layer.w_value)), g.param(layer.b_value));
    std::vector<Var> heads;
    for (int head = 0; head < cfg.n_heads; ++head) {
      const std::size_t begin = static_cast<std::size_t>(head) * head_dim;
      Var qh = g.slice_cols(q, begin, head_dim);
      Var kh = g.slice_cols(k, begin, head_dim);
      Var vh = g.slice_cols(v, begin, head_dim);
      Var scores = g.scale(g.matmul(qh, kh, true), inv_sqrt);
      if (any_blocked) scores = g.masked_fill(scores, blocked, -1e9);
      Var probs = g.softmax_rows(scores);
      if (trace) trace->probabilities.push_back(g.value(probs));
      heads.push_back(g.matmul(probs, vh));
    }
    Var attended = cfg.n_heads == 1 ? heads[0] : g.concat_cols(heads);
    x = g.add(x, g.add(g.matmul(attended, g.param(layer.w_out)), g.param(layer.b_out)));

    Var h2 = g.layer_norm(x, g.param(layer.ln2_gamma), g.param(layer.ln2_beta));
    Var ff = g.gelu(g.add(g.matmul(h2, g.param(layer.w_ff1)), g.param(layer.b_ff1)));
    x = g.add(x, g.add(g.matmul(ff, g.param(layer.w_ff2)), g.param(layer.b_ff2)));
  }
  return g.layer_norm(x, g.param(params.final_gamma), g.param(params.final_beta));
}

/// Vocabulary logits for the given rows of `hidden` via the tied token table.
inline Var lm_logits(Graph& g, Var hidden, const Parameters& params, std::span<const std::size_t> rows) {
  return g.matmul(g.select_rows(hidden, rows), g.param(params.token_embedding), true);
}

/// Vocabulary logits for every row of `hidden`.
inline Var lm_logits(Graph& g, Var hidden, const Parameters& params) {
  return g.matmul(hidden, g.param(params.token_embedding), true);
}

inline Var cls_state(Graph& g, Var hidden) {
  const std::size_t first = 0;
  return g.select_rows(hidden, std::span<const std::size_t>(&first, 1));
}

/// sigmoid(w . h_CLS + b), shape [1 x 1].
inline Var relevance_prob(Graph& g, Var hidden, const Parameters& params) {
  Var logit = g.add(g.matmul(cls_state(g, hidden), g.param(params.relevance_w)), g.param(params.relevance_b));
  return g.sigmoid(logit);
}

/// W_E h_CLS + b_E, shape [1 x E].
inline Var emotion_logits(Graph& g, Var hidden, const Parameters& params) {
  return g.add(g.matmul(cls_state(g, hidden), g.param(params.emotion_w)), g.param(params.emotion_b));
}

/// Tied-projection logits at the masked positions, [|positions| x V].
/// Empty positions give an empty tensor rather than a graph node.
inline std::optional<Var> mlm_logits(Graph& g, Var hidden, const Parameters& params,
                                     std::span<const std::size_t> positions) {
  if (positions.empty()) return std::nullopt;
  const std::size_t len = g.value(hidden).rows();
  for (auto p : positions) {
    if (p >= len) throw ContractError("index error: mlm position " + std::to_string(p) + " of " + std::to_string(len));
  }
  return lm_logits(g, hidden, params, positions);
}

// ---------------------------------------------------------------- checkpoints

inline Checkpoint parameters_to_checkpoint(const Parameters& params, nlohmann::json header = nlohmann::json::object()) {
  Checkpoint ckpt;
  header["model"] = params.config;
  ckpt.header = std::move(header);
  for (const Parameter* p : params.all()) ckpt.tensors.emplace(p->name, p->value);
  return ckpt;
}

inline Parameters parameters_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.header.contains("model")) throw VersionError("checkpoint header lacks a model config");
  ModelConfig config;
  try {
    config = ckpt.header.at("model").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw VersionError(std::string("bad model config in checkpoint: ") + e.what());
  }
  Parameters params = init_parameters(config, 0);
  for (Parameter* p : params.all()) {
    auto it = ckpt.tensors.find(p->name);
    if (it == ckpt.tensors.end()) throw VersionError("checkpoint lacks parameter " + p->name);
    if (it->second.shape() != p->value.shape()) {
      throw VersionError("parameter " + p->name + " has shape " + shape_string(it->second.shape()) + ", config needs " +
                         shape_string(p->value.shape()));
    }
    p->value = it->second;
  }
  if (ckpt.tensors.size() != params.all().size()) throw VersionError("checkpoint has unexpected extra parameters");
  return params;
}

}  // namespace memedial
