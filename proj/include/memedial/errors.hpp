// Copyright 2026 The memedial Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace memedial {

/// Broad failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
  usage,    // bad configuration or flag values
  data,     // unreadable, malformed or inconsistent files
  numeric,  // non-finite values during training or inference
  contract  // violated precondition in a library call
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Invalid generator/split/training configuration.
class SpecError : public Error {
 public:
  explicit SpecError(const std::string& what) : Error(ErrorKind::usage, "spec error: " + what) {}
};

/// Malformed input file; carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(ErrorKind::data, "parse error at line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A meme or emotion id that does not resolve.
class ReferenceError : public Error {
 public:
  explicit ReferenceError(const std::string& what)
      : Error(ErrorKind::data, "reference error: " + what), detail_(what) {}
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string detail_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::data, "i/o error: " + what) {}
};

/// Checkpoint format or configuration mismatch.
class VersionError : public Error {
 public:
  explicit VersionError(const std::string& what) : Error(ErrorKind::data, "version error: " + what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, "numeric error: " + what) {}
};

/// Shape mismatch, index out of range and other precondition failures.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorKind::contract, what) {}
};

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage:
      return 1;
    case ErrorKind::data:
    case ErrorKind::contract:
      return 2;
    case ErrorKind::numeric:
      return 3;
  }
  return 2;
}

}  // namespace memedial
