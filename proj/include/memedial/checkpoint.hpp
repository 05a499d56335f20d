// Copyright 2026 The memedial Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "memedial/errors.hpp"
#include "memedial/tensor.hpp"

namespace memedial {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "memedial-checkpoint";

/// Named tensors plus a free-form header. On disk:
///   {"format": ..., "version": 1, "header": {...},
///    "parameters": {name: {"shape": [...], "data": [...]}}}
/// Doubles are written with round-trip precision, so load(save(x)) == x bitwise.
struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& ckpt) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, tensor] : ckpt.tensors) {
    params[name] = {{"shape", tensor.shape()},
                    {"data", std::vector<double>(tensor.data().begin(), tensor.data().end())}};
  }
  return {{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"header", ckpt.header},
          {"parameters", std::move(params)}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.value("format", std::string()) != kCheckpointFormat) {
    throw VersionError("not a memedial checkpoint");
  }
  if (!doc.contains("version") || !doc["version"].is_number_integer()) {
    throw VersionError("checkpoint has no version field");
  }
  if (doc["version"].get<int>() != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(doc["version"].get<int>()) + ", expected " +
                       std::to_string(kCheckpointVersion));
  }
  Checkpoint ckpt;
  ckpt.header = doc.value("header", nlohmann::json::object());
  try {
    for (const auto& [name, entry] : doc.at("parameters").items()) {
      ckpt.tensors.emplace(name, Tensor(entry.at("shape").get<Shape>(), entry.at("data").get<std::vector<double>>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw VersionError(std::string("malformed parameter table: ") + e.what());
  }
  return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << checkpoint_to_json(ckpt).dump() << '\n';
  if (!out) throw IoError("short write to " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw VersionError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(doc);
}

}  // namespace memedial
