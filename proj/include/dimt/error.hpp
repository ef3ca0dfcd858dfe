// Copyright 2026 The dimt-tools Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace dimt {

// Failure classes. The CLI maps each one to its own exit status.
enum class ErrorKind {
  Usage,        // bad arguments or invalid configuration values
  Io,           // file system failures, missing stage inputs
  Parse,        // malformed JSONL line
  Schema,       // record is well-formed JSON but violates its schema
  Alignment,    // hypothesis/reference id join failed
  Collection,   // candidate collection exhausted its retries
  Config,       // endpoint rejected the request (HTTP 4xx)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::Usage, what) {}
};

class IoError : public Error {
 public:
  IoError(std::string path, const std::string& what)
      : Error(ErrorKind::Io, path + ": " + what), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// Malformed line in a JSONL file. Carries the 1-based line number and the
// offending content (truncated) for diagnostics.
class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t line, std::string content, const std::string& detail)
      : Error(ErrorKind::Parse, path + ":" + std::to_string(line) + ": malformed record: " + detail +
                                    " [" + truncate(content) + "]"),
        line_(line),
        content_(std::move(content)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& content() const noexcept { return content_; }

 private:
  static std::string truncate(const std::string& s) {
    return s.size() <= 120 ? s : s.substr(0, 117) + "...";
  }

  std::size_t line_;
  std::string content_;
};

class SchemaError : public Error {
 public:
  SchemaError(std::string field, const std::string& what)
      : Error(ErrorKind::Schema, what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class AlignmentError : public Error {
 public:
  explicit AlignmentError(const std::string& what) : Error(ErrorKind::Alignment, what) {}
};

class CollectionError : public Error {
 public:
  explicit CollectionError(const std::string& what) : Error(ErrorKind::Collection, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

}  // namespace dimt
