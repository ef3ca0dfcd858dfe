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

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dimt/bleu.hpp"
#include "dimt/core.hpp"
#include "dimt/error.hpp"
#include "dimt/hash.hpp"
#include "dimt/jsonl.hpp"

namespace dimt {

inline json to_json(const BleuConfig& c) {
  return {{"max_order", c.max_order},
          {"smoothing", to_string(c.smoothing)},
          {"epsilon", c.epsilon},
          {"tokenization", to_string(c.tokenization)}};
}

inline BleuConfig bleu_config_from_json(const json& j, BleuConfig base = BleuConfig::corpus_default()) {
  if (!j.is_object()) throw UsageError("bleu config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "max_order") {
        base.max_order = value.get<int>();
      } else if (key == "smoothing") {
        base.smoothing = parse_smoothing(value.get<std::string>());
      } else if (key == "epsilon") {
        base.epsilon = value.get<double>();
      } else if (key == "tokenization") {
        base.tokenization = parse_tokenization(value.get<std::string>());
      } else {
        throw UsageError("unknown bleu config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("invalid bleu config: ") + e.what());
  }
  base.validate();
  return base;
}

// Every setting that can change a score, in a fixed order.
inline std::string canonical_config(const BleuConfig& c) {
  char eps[32];
  std::snprintf(eps, sizeof eps, "%.15g", c.epsilon);
  if (std::strtod(eps, nullptr) != c.epsilon) std::snprintf(eps, sizeof eps, "%.17g", c.epsilon);
  return "bleu;max_order=" + std::to_string(c.max_order) + ";smoothing=" + std::string(to_string(c.smoothing)) +
         ";epsilon=" + eps + ";tokenization=" + std::string(to_string(c.tokenization)) +
         ";normalization=nfc;case=sensitive";
}

inline std::string config_fingerprint(const BleuConfig& c) { return "sha256:" + sha256_hex(canonical_config(c)); }

// Report columns: the four track 1 sub-tracks, then track 2's two MT columns.
struct Column {
  TrackKind track;
  Split split;
  SubTask sub_task;

  friend bool operator==(const Column&, const Column&) = default;
};

inline constexpr std::array<Column, 6> kColumns = {{
    {TrackKind::Track1WebDoc, Split::Valid, SubTask::OCR},
    {TrackKind::Track1WebDoc, Split::Valid, SubTask::MT},
    {TrackKind::Track1WebDoc, Split::Test, SubTask::OCR},
    {TrackKind::Track1WebDoc, Split::Test, SubTask::MT},
    {TrackKind::Track2Arxiv, Split::Valid, SubTask::MT},
    {TrackKind::Track2Arxiv, Split::Test, SubTask::MT},
}};

inline std::size_t column_index(TrackKind track, Split split, SubTask sub_task) {
  for (std::size_t i = 0; i < kColumns.size(); ++i) {
    if (kColumns[i] == Column{track, split, sub_task}) return i;
  }
  throw UsageError("no report column for " + std::string(to_string(track)) + "/" + std::string(to_string(split)) +
                   "/" + std::string(to_string(sub_task)));
}

// "track1/valid/ocr"
inline std::string column_key(const Column& c) {
  return std::string(to_string(c.track)) + "/" + std::string(to_string(c.split)) + "/" +
         std::string(to_string(c.sub_task));
}

// "Valid-OCR"
inline std::string column_label(const Column& c) {
  return std::string(c.split == Split::Valid ? "Valid-" : "Test-") + (c.sub_task == SubTask::OCR ? "OCR" : "MT");
}

inline double round2(double v) { return std::round(v * 100.0) / 100.0; }

struct ReportRow {
  std::string system_label;
  std::array<std::optional<double>, kColumns.size()> cells{};

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct EvalReport {
  std::vector<ReportRow> rows;
  std::string config_fingerprint;
  std::string config_description;

  // Sets one cell, adding the row if needed. Values are BLEU percentages
  // stored rounded to 2 decimals.
  void set(const std::string& system, TrackKind track, Split split, SubTask sub_task, double value) {
    if (!(value >= 0.0 && value <= 100.0)) throw UsageError("report cell value must be in [0, 100]");
    const std::size_t col = column_index(track, split, sub_task);
    ReportRow* row = nullptr;
    for (ReportRow& r : rows) {
      if (r.system_label == system) row = &r;
    }
    if (!row) row = &rows.emplace_back(ReportRow{system, {}});
    row->cells[col] = round2(value);
  }

  void validate() const {
    std::unordered_set<std::string> labels;
    for (const ReportRow& r : rows) {
      if (r.system_label.empty()) throw SchemaError("system", "report row without a system label");
      if (!labels.insert(r.system_label).second) {
        throw SchemaError("system", "duplicate report row '" + r.system_label + "'");
      }
      for (const auto& cell : r.cells) {
        if (cell && !(*cell >= 0.0 && *cell <= 100.0)) {
          throw SchemaError("cells", "row '" + r.system_label + "' has a value outside [0, 100]");
        }
      }
    }
  }

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline EvalReport make_report(const BleuConfig& config) {
  return {{}, config_fingerprint(config), canonical_config(config)};
}

enum class ReportFormat { Markdown, Csv, Json };

inline ReportFormat parse_report_format(std::string_view s) {
  if (s == "md" || s == "markdown") return ReportFormat::Markdown;
  if (s == "csv") return ReportFormat::Csv;
  if (s == "json") return ReportFormat::Json;
  throw UsageError("unknown report format '" + std::string(s) + "' (expected md, csv or json)");
}

namespace detail {

inline std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string md_cell(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += '\\';
    out += (c == '\n' || c == '\r') ? ' ' : c;
  }
  return out;
}

}  // namespace detail

inline json report_to_json(const EvalReport& report) {
  json rows = json::array();
  for (const ReportRow& r : report.rows) {
    json cells = json::object();
    for (std::size_t i = 0; i < kColumns.size(); ++i) {
      cells[column_key(kColumns[i])] = r.cells[i] ? json(round2(*r.cells[i])) : json(nullptr);
    }
    rows.push_back({{"system", r.system_label}, {"cells", std::move(cells)}});
  }
  return {{"config_fingerprint", report.config_fingerprint},
          {"config", report.config_description},
          {"rows", std::move(rows)}};
}

inline EvalReport report_from_json(const json& j) {
  EvalReport report;
  report.config_fingerprint = field::identifier(j, "config_fingerprint");
  report.config_description = field::identifier(j, "config");
  const json& rows = field::require(j, "rows");
  if (!rows.is_array()) throw SchemaError("rows", "field 'rows' must be an array");
  for (const json& r : rows) {
    ReportRow row{field::identifier(r, "system"), {}};
    const json& cells = field::require(r, "cells");
    if (!cells.is_object()) throw SchemaError("cells", "field 'cells' must be an object");
    for (const auto& [key, value] : cells.items()) {
      std::optional<std::size_t> col;
      for (std::size_t i = 0; i < kColumns.size(); ++i) {
        if (column_key(kColumns[i]) == key) col = i;
      }
      if (!col) throw SchemaError("cells", "unknown report column '" + key + "'");
      if (value.is_null()) continue;
      if (!value.is_number()) throw SchemaError("cells", "cell '" + key + "' must be a number or null");
      row.cells[*col] = round2(value.get<double>());
    }
    report.rows.push_back(std::move(row));
  }
  report.validate();
  return report;
}

inline EvalReport parse_report(std::string_view text) {
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ParseError("<report>", 0, "", "report is not valid JSON");
  return report_from_json(j);
}

inline EvalReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open report");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_report(text);
  } catch (const ParseError&) {
    throw ParseError(path.string(), 0, "", "report is not valid JSON");
  }
}

// Markdown mirrors the two-level track / sub-track header; absent cells are "/".
inline std::string render_report(const EvalReport& report, ReportFormat format) {
  report.validate();
  std::string out;
  switch (format) {
    case ReportFormat::Markdown: {
      out += "| Model | track1 |  |  |  | track2 |  |\n";
      out += "|---|---|---|---|---|---|---|\n";
      out += "|  |";
      for (const Column& c : kColumns) out += " " + column_label(c) + " |";
      out += "\n";
      for (const ReportRow& r : report.rows) {
        out += "| " + detail::md_cell(r.system_label) + " |";
        for (const auto& cell : r.cells) out += " " + (cell ? detail::fixed2(*cell) : std::string("/")) + " |";
        out += "\n";
      }
      out += "\nBLEU x 100, corpus level. Config: `" + report.config_description + "` (" + report.config_fingerprint +
             ")\n";
      break;
    }
    case ReportFormat::Csv: {
      out += "system";
      for (const Column& c : kColumns) {
        out += ",";
        out += std::string(to_string(c.track)) + "_" + std::string(to_string(c.split)) + "_" +
               std::string(to_string(c.sub_task));
      }
      out += "\n";
      for (const ReportRow& r : report.rows) {
        out += detail::csv_field(r.system_label);
        for (const auto& cell : r.cells) out += "," + (cell ? detail::fixed2(*cell) : std::string());
        out += "\n";
      }
      break;
    }
    case ReportFormat::Json:
      out = report_to_json(report).dump(2) + "\n";
      break;
  }
  return out;
}

struct ScoreOptions {
  bool allow_partial = false;
  // Written whenever ids fail to match, before any alignment error.
  std::filesystem::path diagnostics_path;
};

struct SubtaskScore {
  double bleu_percent = 0.0;
  BleuScore detail;
  std::size_t pairs = 0;
  std::vector<std::string> missing_hypotheses;  // reference ids with no hypothesis
  std::vector<std::string> unknown_hypotheses;  // hypothesis ids with no reference
};

inline const std::string& reference_text(const Segment& s, SubTask sub_task) {
  if (sub_task == SubTask::OCR) {
    if (!s.has_source_text()) throw SchemaError("source_text", "segment '" + s.id + "' has no OCR ground truth");
    return s.source_text;
  }
  if (!s.has_reference()) {
    throw SchemaError("reference_translation", "segment '" + s.id + "' has no reference_translation");
  }
  return *s.reference_translation;
}

// Corpus BLEU x 100 over hypotheses joined to references by segment id. OCR
// scores against source_text, MT against reference_translation.
inline SubtaskScore score_pairs(std::span<const Hypothesis> hypotheses, std::span<const Segment> references,
                                SubTask sub_task, const BleuConfig& config, const ScoreOptions& options = {}) {
  config.validate();
  std::unordered_map<std::string, const Hypothesis*> by_id;
  for (const Hypothesis& h : hypotheses) {
    if (!by_id.emplace(h.segment_id, &h).second) {
      throw AlignmentError("duplicate hypothesis id '" + h.segment_id + "'");
    }
  }
  SubtaskScore result;
  std::unordered_set<std::string> ref_ids;
  std::vector<BleuPair> pairs;
  for (const Segment& s : references) {
    if (!ref_ids.insert(s.id).second) throw AlignmentError("duplicate reference id '" + s.id + "'");
    const auto it = by_id.find(s.id);
    if (it == by_id.end()) {
      result.missing_hypotheses.push_back(s.id);
      continue;
    }
    pairs.push_back({it->second->text, {reference_text(s, sub_task)}});
  }
  for (const Hypothesis& h : hypotheses) {
    if (!ref_ids.count(h.segment_id)) result.unknown_hypotheses.push_back(h.segment_id);
  }

  const bool unmatched = !result.missing_hypotheses.empty() || !result.unknown_hypotheses.empty();
  if (unmatched && !options.diagnostics_path.empty()) {
    const json diag = {{"sub_task", to_string(sub_task)},
                       {"matched", pairs.size()},
                       {"missing_hypotheses", result.missing_hypotheses},
                       {"unknown_hypotheses", result.unknown_hypotheses}};
    std::ofstream out(options.diagnostics_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(options.diagnostics_path.string(), "cannot write diagnostics");
    out << diag.dump(2) << "\n";
  }
  if (unmatched && !options.allow_partial) {
    const auto& ids = result.missing_hypotheses.empty() ? result.unknown_hypotheses : result.missing_hypotheses;
    std::string list;
    for (std::size_t i = 0; i < ids.size() && i < 10; ++i) list += (i ? ", " : "") + ids[i];
    if (ids.size() > 10) list += ", ...";
    throw AlignmentError(std::to_string(result.missing_hypotheses.size()) + " reference ids lack a hypothesis and " +
                         std::to_string(result.unknown_hypotheses.size()) + " hypothesis ids have no reference (" +
                         (result.missing_hypotheses.empty() ? "unknown" : "missing") + ": " + list +
                         "); pass --allow-partial to score the intersection");
  }
  if (pairs.empty()) throw AlignmentError("no hypothesis matches any reference id");
  result.pairs = pairs.size();
  result.detail = corpus_bleu(pairs, config);
  result.bleu_percent = result.detail.score * 100.0;
  return result;
}

inline SubtaskScore score_subtask(const std::filesystem::path& hypotheses, const std::filesystem::path& references,
                                  SubTask sub_task, const BleuConfig& config, const ScoreOptions& options = {}) {
  const auto hyps = read_jsonl<Hypothesis>(hypotheses);
  const auto refs = read_jsonl<Segment>(references);
  return score_pairs(hyps, refs, sub_task, config, options);
}

}  // namespace dimt
