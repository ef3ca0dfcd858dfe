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

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dimt/error.hpp"
#include "dimt/graphemes.hpp"
#include "dimt/jsonl.hpp"
#include "dimt/segmenter.hpp"
#include "dimt/utf8.hpp"

namespace dimt {

struct PostprocessConfig {
  std::set<std::string> special_symbols = {"-", "…", "_", "*", "=", "~", "."};
  int max_run_length = 10;
  int table_pipe_threshold = 50;
  int table_row_threshold = 20;
  bool collapse_spaces = true;
  // Remove a single space between two CJK characters when the segmenter puts
  // them in the same word. Off by default.
  bool join_cjk_words = false;
  std::string segmenter = "greedy-lexicon";
  std::filesystem::path segmenter_lexicon;

  void validate() const {
    if (max_run_length < 1) throw UsageError("max_run_length must be >= 1");
    if (table_pipe_threshold < 1 || table_row_threshold < 1) throw UsageError("table thresholds must be >= 1");
    if (special_symbols.empty()) throw UsageError("special_symbols must be non-empty");
    for (const std::string& s : special_symbols) {
      if (graphemes(s).size() != 1) throw UsageError("special symbol '" + s + "' is not a single grapheme cluster");
    }
  }
};

enum class Rule { TableSuppressed, RunCompressed, SpacesCollapsed };

inline std::string_view to_string(Rule r) {
  switch (r) {
    case Rule::TableSuppressed: return "TableSuppressed";
    case Rule::RunCompressed: return "RunCompressed";
    case Rule::SpacesCollapsed: return "SpacesCollapsed";
  }
  return "?";
}

struct PostprocessReport {
  std::vector<Rule> rules_fired;
  int runs_compressed = 0;
  std::string output_text;
};

struct CompressResult {
  std::string text;
  int runs_compressed = 0;
};

// Every maximal run of one repeated special grapheme longer than
// max_run_length is cut to exactly max_run_length copies.
inline CompressResult compress_runs(std::string_view text, const PostprocessConfig& config) {
  CompressResult out;
  out.text.reserve(text.size());
  const auto clusters = graphemes(text);
  for (std::size_t i = 0; i < clusters.size();) {
    std::size_t j = i + 1;
    while (j < clusters.size() && clusters[j] == clusters[i]) ++j;
    const std::size_t run = j - i;
    const bool special = config.special_symbols.count(std::string(clusters[i])) > 0;
    std::size_t keep = run;
    if (special && run > static_cast<std::size_t>(config.max_run_length)) {
      keep = static_cast<std::size_t>(config.max_run_length);
      ++out.runs_compressed;
    }
    for (std::size_t k = 0; k < keep; ++k) out.text.append(clusters[i]);
    i = j;
  }
  return out;
}

struct TableCheck {
  std::size_t pipes = 0;
  std::size_t pipe_rows = 0;  // lines carrying at least two pipes
};

inline TableCheck inspect_table(std::string_view text) {
  TableCheck t;
  std::size_t in_line = 0;
  for (char c : text) {
    if (c == '|') {
      ++t.pipes;
      ++in_line;
    } else if (c == '\n') {
      if (in_line >= 2) ++t.pipe_rows;
      in_line = 0;
    }
  }
  if (in_line >= 2) ++t.pipe_rows;
  return t;
}

inline bool is_complex_table(std::string_view text, const PostprocessConfig& config) {
  const TableCheck t = inspect_table(text);
  return t.pipes >= static_cast<std::size_t>(config.table_pipe_threshold) ||
         t.pipe_rows >= static_cast<std::size_t>(config.table_row_threshold);
}

// Output is "" for a complex table, the input verbatim otherwise.
inline std::pair<std::string, bool> suppress_complex_table(std::string_view text, const PostprocessConfig& config) {
  if (is_complex_table(text, config)) return {std::string(), true};
  return {std::string(text), false};
}

namespace detail {

// Drops a single ASCII space between two CJK characters when the segmenter
// joins the characters on either side into one word.
inline std::string join_cjk_words(std::string_view text, const Segmenter& segmenter) {
  const auto cps = utf8::decode(text);
  std::vector<bool> drop(cps.size(), false);
  for (std::size_t i = 1; i + 1 < cps.size(); ++i) {
    if (cps[i].value != ' ' || !utf8::is_cjk(cps[i - 1].value) || !utf8::is_cjk(cps[i + 1].value)) continue;
    std::u32string left;
    for (std::size_t k = i; k > 0 && utf8::is_cjk(cps[k - 1].value) && !utf8::is_space(cps[k - 1].value); --k) {
      left.insert(left.begin(), cps[k - 1].value);
    }
    std::u32string right;
    for (std::size_t k = i + 1; k < cps.size() && utf8::is_cjk(cps[k].value) && !utf8::is_space(cps[k].value); ++k) {
      right.push_back(cps[k].value);
    }
    const std::u32string joined = left + right;
    std::size_t pos = 0;
    for (std::size_t len : segmenter.segment(joined)) {
      if (pos < left.size() && pos + len > left.size()) drop[i] = true;
      pos += len;
    }
  }
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < cps.size(); ++i) {
    if (!drop[i]) out.append(text.substr(cps[i].offset, cps[i].length));
  }
  return out;
}

}  // namespace detail

// Collapses every run of two or more ASCII spaces to one and trims leading
// and trailing ASCII spaces. Tabs and newlines are left alone.
inline std::string normalize_spaces(std::string_view text, const PostprocessConfig& config,
                                    const Segmenter* segmenter = nullptr) {
  if (!config.collapse_spaces) return std::string(text);
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == ' ' && !out.empty() && out.back() == ' ') continue;
    out.push_back(text[i]);
  }
  const auto first = out.find_first_not_of(' ');
  if (first == std::string::npos) return std::string();
  out = out.substr(first, out.find_last_not_of(' ') - first + 1);

  if (config.join_cjk_words) {
    std::shared_ptr<const Segmenter> owned;
    if (!segmenter) {
      owned = make_segmenter(config.segmenter, config.segmenter_lexicon);
      segmenter = owned.get();
    }
    out = detail::join_cjk_words(out, *segmenter);
  }
  return out;
}

// Applies the rules in order: table suppression, run compression, space
// normalization. A rule is reported only when it changed the text.
class Postprocessor {
 public:
  explicit Postprocessor(PostprocessConfig config) : config_(std::move(config)) {
    config_.validate();
    if (config_.join_cjk_words) segmenter_ = make_segmenter(config_.segmenter, config_.segmenter_lexicon);
  }

  const PostprocessConfig& config() const { return config_; }

  PostprocessReport run(std::string_view text) const {
    PostprocessReport report;
    auto [current, suppressed] = suppress_complex_table(text, config_);
    if (suppressed && !text.empty()) report.rules_fired.push_back(Rule::TableSuppressed);

    CompressResult compressed = compress_runs(current, config_);
    if (compressed.runs_compressed > 0) {
      report.rules_fired.push_back(Rule::RunCompressed);
      report.runs_compressed = compressed.runs_compressed;
    }
    current = std::move(compressed.text);

    std::string spaced = normalize_spaces(current, config_, segmenter_.get());
    if (spaced != current) report.rules_fired.push_back(Rule::SpacesCollapsed);
    report.output_text = std::move(spaced);
    return report;
  }

 private:
  PostprocessConfig config_;
  std::shared_ptr<const Segmenter> segmenter_;
};

inline PostprocessReport run_pipeline(std::string_view text, const PostprocessConfig& config) {
  return Postprocessor(config).run(text);
}

// Key-value JSON config; absent keys keep their defaults.
inline PostprocessConfig postprocess_config_from_json(const json& j, PostprocessConfig base = {}) {
  if (!j.is_object()) throw UsageError("postprocess config must be a JSON object");
  try {
    if (j.contains("special_symbols")) base.special_symbols = j.at("special_symbols").get<std::set<std::string>>();
    if (j.contains("max_run_length")) base.max_run_length = j.at("max_run_length").get<int>();
    if (j.contains("table_pipe_threshold")) base.table_pipe_threshold = j.at("table_pipe_threshold").get<int>();
    if (j.contains("table_row_threshold")) base.table_row_threshold = j.at("table_row_threshold").get<int>();
    if (j.contains("collapse_spaces")) base.collapse_spaces = j.at("collapse_spaces").get<bool>();
    if (j.contains("join_cjk_words")) base.join_cjk_words = j.at("join_cjk_words").get<bool>();
    if (j.contains("segmenter")) base.segmenter = j.at("segmenter").get<std::string>();
    if (j.contains("segmenter_lexicon")) base.segmenter_lexicon = j.at("segmenter_lexicon").get<std::string>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("invalid postprocess config: ") + e.what());
  }
  base.validate();
  return base;
}

inline json to_json(const PostprocessConfig& c) {
  json j = {{"special_symbols", c.special_symbols},
            {"max_run_length", c.max_run_length},
            {"table_pipe_threshold", c.table_pipe_threshold},
            {"table_row_threshold", c.table_row_threshold},
            {"collapse_spaces", c.collapse_spaces},
            {"join_cjk_words", c.join_cjk_words},
            {"segmenter", c.segmenter}};
  if (!c.segmenter_lexicon.empty()) j["segmenter_lexicon"] = c.segmenter_lexicon.string();
  return j;
}

// One post-processed system output.
struct PostprocessedRecord {
  std::string segment_id;
  std::string text;
  std::vector<Rule> rules_fired;
  int runs_compressed = 0;
};

template <>
struct JsonlSchema<PostprocessedRecord> {
  static PostprocessedRecord from_json(const json& j) {
    PostprocessedRecord r;
    r.segment_id = field::identifier(j, "segment_id");
    r.text = field::text(j, "text");
    if (j.contains("rules_fired")) {
      for (const auto& name : j.at("rules_fired")) {
        const std::string s = name.get<std::string>();
        if (s == "TableSuppressed") {
          r.rules_fired.push_back(Rule::TableSuppressed);
        } else if (s == "RunCompressed") {
          r.rules_fired.push_back(Rule::RunCompressed);
        } else if (s == "SpacesCollapsed") {
          r.rules_fired.push_back(Rule::SpacesCollapsed);
        } else {
          throw SchemaError("rules_fired", "unknown rule '" + s + "'");
        }
      }
    }
    if (j.contains("runs_compressed")) r.runs_compressed = static_cast<int>(field::integer(j, "runs_compressed"));
    return r;
  }

  static json to_json(const PostprocessedRecord& r) {
    json rules = json::array();
    for (Rule rule : r.rules_fired) rules.push_back(to_string(rule));
    return {{"segment_id", r.segment_id},
            {"text", r.text},
            {"rules_fired", std::move(rules)},
            {"runs_compressed", r.runs_compressed}};
  }
};

}  // namespace dimt
