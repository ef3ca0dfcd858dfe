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
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dimt/core.hpp"
#include "dimt/error.hpp"
#include "dimt/normalize.hpp"

namespace dimt {

using json = nlohmann::ordered_json;

// Specialize with `static T from_json(const json&)` and
// `static json to_json(const T&)` for every record type stored as JSONL.
template <typename T>
struct JsonlSchema;

template <>
struct JsonlSchema<json> {
  static json from_json(const json& j) { return j; }
  static json to_json(const json& j) { return j; }
};

namespace field {

inline const json& require(const json& j, const char* name) {
  if (!j.is_object()) throw SchemaError(name, "record is not a JSON object");
  const auto it = j.find(name);
  if (it == j.end() || it->is_null()) throw SchemaError(name, std::string("missing required field '") + name + "'");
  return *it;
}

// Text fields are NFC-normalized on ingestion.
inline std::string text(const json& j, const char* name) {
  const json& v = require(j, name);
  if (!v.is_string()) throw SchemaError(name, std::string("field '") + name + "' must be a string");
  return normalize_nfc(v.get_ref<const std::string&>());
}

inline std::optional<std::string> optional_text(const json& j, const char* name) {
  if (!j.is_object()) throw SchemaError(name, "record is not a JSON object");
  const auto it = j.find(name);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw SchemaError(name, std::string("field '") + name + "' must be a string");
  return normalize_nfc(it->get_ref<const std::string&>());
}

inline std::string identifier(const json& j, const char* name) {
  const json& v = require(j, name);
  if (!v.is_string()) throw SchemaError(name, std::string("field '") + name + "' must be a string");
  return v.get<std::string>();
}

inline long long integer(const json& j, const char* name) {
  const json& v = require(j, name);
  if (!v.is_number_integer()) throw SchemaError(name, std::string("field '") + name + "' must be an integer");
  return v.get<long long>();
}

inline bool boolean(const json& j, const char* name) {
  const json& v = require(j, name);
  if (!v.is_boolean()) throw SchemaError(name, std::string("field '") + name + "' must be a boolean");
  return v.get<bool>();
}

inline double number(const json& j, const char* name) {
  const json& v = require(j, name);
  if (!v.is_number()) throw SchemaError(name, std::string("field '") + name + "' must be a number");
  return v.get<double>();
}

}  // namespace field

template <>
struct JsonlSchema<Segment> {
  static Segment from_json(const json& j) {
    Segment s;
    s.id = field::identifier(j, "id");
    s.source_text = field::text(j, "source_text");
    s.reference_translation = field::optional_text(j, "reference_translation");
    s.image_ref = field::optional_text(j, "image_ref");
    validate(s);
    return s;
  }

  static json to_json(const Segment& s) {
    json j = {{"id", s.id}, {"source_text", s.source_text}};
    if (s.reference_translation) j["reference_translation"] = *s.reference_translation;
    if (s.image_ref) j["image_ref"] = *s.image_ref;
    return j;
  }
};

// Accepts any stage output that names a segment and carries text: MBR results
// (`selected_text`), post-processed records and plain hypothesis files
// (`text`). The id may be spelled `segment_id` or `id`.
template <>
struct JsonlSchema<Hypothesis> {
  static Hypothesis from_json(const json& j) {
    Hypothesis h;
    if (!j.is_object()) throw SchemaError("segment_id", "record is not a JSON object");
    h.segment_id = j.contains("segment_id") ? field::identifier(j, "segment_id") : field::identifier(j, "id");
    if (j.contains("text")) {
      h.text = field::text(j, "text");
    } else if (j.contains("selected_text")) {
      h.text = field::text(j, "selected_text");
    } else {
      throw SchemaError("text", "missing required field 'text' (or 'selected_text')");
    }
    return h;
  }

  static json to_json(const Hypothesis& h) { return {{"segment_id", h.segment_id}, {"text", h.text}}; }
};

template <typename T>
struct Record {
  std::size_t line = 0;
  T value;
};

// Streams records of type T from a JSONL file in file order. Blank lines are
// skipped; a UTF-8 byte-order mark on the first line is tolerated.
template <typename T>
class JsonlReader {
 public:
  explicit JsonlReader(std::filesystem::path path) : path_(std::move(path)), in_(path_, std::ios::binary) {
    if (!in_) throw IoError(path_.string(), "cannot open for reading");
  }

  const std::filesystem::path& path() const { return path_; }

  std::optional<Record<T>> next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line_no_ == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ParseError(path_.string(), line_no_, line, e.what());
      }
      try {
        return Record<T>{line_no_, JsonlSchema<T>::from_json(j)};
      } catch (const SchemaError& e) {
        throw SchemaError(e.field(), path_.string() + ":" + std::to_string(line_no_) + ": " + e.what());
      } catch (const UsageError& e) {
        throw SchemaError("", path_.string() + ":" + std::to_string(line_no_) + ": " + e.what());
      } catch (const json::exception& e) {
        throw SchemaError("", path_.string() + ":" + std::to_string(line_no_) + ": " + e.what());
      }
    }
    if (in_.bad()) throw IoError(path_.string(), "read failure");
    return std::nullopt;
  }

  template <typename F>
  void for_each(F&& f) {
    while (auto rec = next()) f(std::move(*rec));
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::size_t line_no_ = 0;
};

template <typename T>
std::vector<T> read_jsonl(const std::filesystem::path& path) {
  std::vector<T> out;
  JsonlReader<T> reader(path);
  reader.for_each([&](Record<T>&& r) { out.push_back(std::move(r.value)); });
  return out;
}

// One record per line, UTF-8 without BOM, every line newline-terminated.
template <typename T>
class JsonlWriter {
 public:
  explicit JsonlWriter(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) {
      std::error_code ec;
      std::filesystem::create_directories(path_.parent_path(), ec);
      if (ec) throw IoError(path_.parent_path().string(), "cannot create directory: " + ec.message());
    }
    out_.open(path_, std::ios::binary | std::ios::trunc);
    if (!out_) throw IoError(path_.string(), "cannot open for writing");
  }

  void write(const T& record) {
    std::string line;
    try {
      line = JsonlSchema<T>::to_json(record).dump();
    } catch (const json::type_error& e) {
      throw IoError(path_.string(), std::string("cannot serialize record: ") + e.what());
    }
    line.push_back('\n');
    out_.write(line.data(), static_cast<std::streamsize>(line.size()));
    if (!out_) throw IoError(path_.string(), "write failure");
    ++count_;
  }

  std::size_t count() const { return count_; }

  void close() {
    out_.close();
    if (out_.fail()) throw IoError(path_.string(), "close failure");
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t count_ = 0;
};

template <typename T, typename Range>
std::size_t write_jsonl(const Range& records, const std::filesystem::path& path) {
  JsonlWriter<T> writer(path);
  for (const auto& r : records) writer.write(r);
  writer.close();
  return writer.count();
}

}  // namespace dimt
