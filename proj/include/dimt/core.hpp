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

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dimt/error.hpp"
#include "dimt/utf8.hpp"

namespace dimt {

inline constexpr std::string_view kVersion = "0.3.0";

// One row of a track's dataset: a document image and/or its text, with an
// optional reference translation.
struct Segment {
  std::string id;
  std::string source_text;
  std::optional<std::string> reference_translation;
  std::optional<std::string> image_ref;

  bool has_source_text() const { return !source_text.empty(); }
  bool has_reference() const { return reference_translation && !reference_translation->empty(); }
  bool has_image() const { return image_ref && !image_ref->empty(); }

  friend bool operator==(const Segment&, const Segment&) = default;
};

inline void validate(const Segment& s) {
  if (s.id.empty()) throw SchemaError("id", "segment id must be non-empty");
  if (!s.has_source_text() && !s.has_image()) {
    throw SchemaError("source_text", "segment '" + s.id + "' has neither source_text nor image_ref");
  }
}

// A system output for one segment, keyed by segment id.
struct Hypothesis {
  std::string segment_id;
  std::string text;

  friend bool operator==(const Hypothesis&, const Hypothesis&) = default;
};

enum class TrackKind { Track1WebDoc, Track2Arxiv };
enum class SubTask { OCR, MT };
enum class Split { Train, Valid, Test };

// A scoring sub-track. Track 2 only has an MT sub-task.
class Track {
 public:
  Track(TrackKind kind, SubTask sub_task) : kind_(kind), sub_task_(sub_task) {
    if (kind == TrackKind::Track2Arxiv && sub_task != SubTask::MT) {
      throw UsageError("track 2 only admits the MT sub-task");
    }
  }

  TrackKind kind() const { return kind_; }
  SubTask sub_task() const { return sub_task_; }

  friend bool operator==(const Track&, const Track&) = default;

 private:
  TrackKind kind_;
  SubTask sub_task_;
};

inline std::string_view to_string(TrackKind k) { return k == TrackKind::Track1WebDoc ? "track1" : "track2"; }
inline std::string_view to_string(SubTask t) { return t == SubTask::OCR ? "ocr" : "mt"; }
inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

inline TrackKind parse_track(std::string_view s) {
  if (s == "1" || s == "track1") return TrackKind::Track1WebDoc;
  if (s == "2" || s == "track2") return TrackKind::Track2Arxiv;
  throw UsageError("unknown track '" + std::string(s) + "' (expected 1 or 2)");
}

inline SubTask parse_sub_task(std::string_view s) {
  if (s == "ocr" || s == "OCR") return SubTask::OCR;
  if (s == "mt" || s == "MT") return SubTask::MT;
  throw UsageError("unknown sub-task '" + std::string(s) + "' (expected ocr or mt)");
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "valid") return Split::Valid;
  if (s == "test") return Split::Test;
  throw UsageError("unknown split '" + std::string(s) + "' (expected train, valid or test)");
}

enum class TokenizationScheme { Whitespace, CjkChar, Mixed };

inline std::string_view to_string(TokenizationScheme s) {
  switch (s) {
    case TokenizationScheme::Whitespace: return "whitespace";
    case TokenizationScheme::CjkChar: return "cjk-char";
    case TokenizationScheme::Mixed: return "mixed";
  }
  return "?";
}

inline TokenizationScheme parse_tokenization(std::string_view s) {
  if (s == "whitespace") return TokenizationScheme::Whitespace;
  if (s == "cjk-char" || s == "char") return TokenizationScheme::CjkChar;
  if (s == "mixed") return TokenizationScheme::Mixed;
  throw UsageError("unknown tokenization '" + std::string(s) + "' (expected whitespace, cjk-char or mixed)");
}

struct TokenSequence {
  std::vector<std::string> tokens;
  TokenizationScheme scheme = TokenizationScheme::Mixed;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
};

// Whitespace: split on Unicode White_Space.
// CjkChar: every non-space code point is a token.
// Mixed: each CJK code point is a token; non-CJK runs are split on whitespace.
inline TokenSequence tokenize(std::string_view text, TokenizationScheme scheme) {
  TokenSequence seq{{}, scheme};
  std::string current;
  const auto flush = [&] {
    if (!current.empty()) seq.tokens.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t pos = 0; pos < text.size();) {
    const utf8::CodePoint cp = utf8::decode_at(text, pos);
    const std::string_view bytes = text.substr(cp.offset, cp.length);
    pos += cp.length;
    if (utf8::is_space(cp.value)) {
      flush();
      continue;
    }
    const bool split_here = scheme == TokenizationScheme::CjkChar ||
                            (scheme == TokenizationScheme::Mixed && utf8::is_cjk(cp.value));
    if (split_here) {
      flush();
      seq.tokens.emplace_back(bytes);
    } else {
      current.append(bytes);
    }
  }
  flush();
  return seq;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

}  // namespace dimt
