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
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dimt/core.hpp"
#include "dimt/error.hpp"
#include "dimt/jsonl.hpp"

namespace dimt {

enum class TaskKind { OcrOnly, MtOnly, PcotChained, EndToEnd };

inline constexpr std::array<TaskKind, 4> kAllTasks = {TaskKind::OcrOnly, TaskKind::MtOnly, TaskKind::PcotChained,
                                                      TaskKind::EndToEnd};

inline std::string_view to_string(TaskKind t) {
  switch (t) {
    case TaskKind::OcrOnly: return "ocr_only";
    case TaskKind::MtOnly: return "mt_only";
    case TaskKind::PcotChained: return "pcot_chained";
    case TaskKind::EndToEnd: return "end_to_end";
  }
  return "?";
}

inline TaskKind parse_task_kind(std::string_view s) {
  if (s == "ocr_only" || s == "OcrOnly") return TaskKind::OcrOnly;
  if (s == "mt_only" || s == "MtOnly") return TaskKind::MtOnly;
  if (s == "pcot_chained" || s == "PcotChained") return TaskKind::PcotChained;
  if (s == "end_to_end" || s == "EndToEnd") return TaskKind::EndToEnd;
  throw UsageError("unknown task kind '" + std::string(s) +
                   "' (expected ocr_only, mt_only, pcot_chained or end_to_end)");
}

// First segment field the task needs but the segment lacks, or "" when the
// segment is usable for the task.
inline std::string_view missing_field(const Segment& s, TaskKind task) {
  switch (task) {
    case TaskKind::OcrOnly:
      if (!s.has_source_text()) return "source_text";
      break;
    case TaskKind::MtOnly:
    case TaskKind::PcotChained:
      if (!s.has_source_text()) return "source_text";
      if (!s.has_reference()) return "reference_translation";
      break;
    case TaskKind::EndToEnd:
      if (!s.has_image()) return "image_ref";
      if (!s.has_reference()) return "reference_translation";
      break;
  }
  return {};
}

inline bool feasible(const Segment& s, TaskKind task) { return missing_field(s, task).empty(); }

enum class Role { User, Assistant };

inline std::string_view to_string(Role r) { return r == Role::User ? "user" : "assistant"; }

struct Turn {
  Role role = Role::User;
  std::string content;

  friend bool operator==(const Turn&, const Turn&) = default;
};

struct TrainingExample {
  std::string example_id;
  std::optional<std::string> image_ref;
  std::vector<Turn> turns;
  TaskKind task = TaskKind::OcrOnly;
  TrackKind track = TrackKind::Track1WebDoc;
  Split split = Split::Train;

  friend bool operator==(const TrainingExample&, const TrainingExample&) = default;
};

inline void validate(const TrainingExample& e) {
  const auto fail = [&](const char* field, const std::string& what) {
    throw SchemaError(field, "example '" + e.example_id + "': " + what);
  };
  if (e.example_id.empty()) throw SchemaError("example_id", "example id must be non-empty");
  if (e.turns.size() < 2 || e.turns.size() % 2 != 0) {
    fail("turns", "needs an even number of turns, at least 2 (got " + std::to_string(e.turns.size()) + ")");
  }
  for (std::size_t i = 0; i < e.turns.size(); ++i) {
    const Role expected = i % 2 == 0 ? Role::User : Role::Assistant;
    if (e.turns[i].role != expected) fail("turns", "turn " + std::to_string(i) + " should be " + std::string(to_string(expected)));
    if (expected == Role::Assistant && e.turns[i].content.empty()) {
      fail("turns", "assistant turn " + std::to_string(i) + " is empty");
    }
  }
  if (e.task == TaskKind::PcotChained && e.turns.size() != 4) fail("turns", "pcot_chained needs exactly 4 turns");
  if (e.task != TaskKind::PcotChained && e.turns.size() != 2) {
    fail("turns", std::string(to_string(e.task)) + " needs exactly 2 turns");
  }
}

// A prompt with `{source_text}` placeholders. `{{` and `}}` are literal braces.
class PromptTemplate {
 public:
  PromptTemplate() = default;

  PromptTemplate(std::string_view slot, std::string text, bool allow_source, bool require_source)
      : text_(std::move(text)) {
    const std::string where = "prompt template '" + std::string(slot) + "'";
    if (text_.empty()) throw UsageError(where + " is empty");
    for (std::size_t i = 0; i < text_.size(); ++i) {
      const char c = text_[i];
      if ((c == '{' || c == '}') && i + 1 < text_.size() && text_[i + 1] == c) {
        literal_.push_back(c);
        ++i;
        continue;
      }
      if (c == '}') throw UsageError(where + ": unmatched '}'");
      if (c != '{') {
        literal_.push_back(c);
        continue;
      }
      const auto close = text_.find('}', i);
      if (close == std::string::npos) throw UsageError(where + ": unterminated placeholder");
      const std::string name = text_.substr(i + 1, close - i - 1);
      if (name != "source_text") throw UsageError(where + ": unknown placeholder {" + name + "}");
      if (!allow_source) throw UsageError(where + " must not contain {source_text}");
      pieces_.push_back(std::move(literal_));
      literal_.clear();
      i = close;
    }
    if (require_source && pieces_.empty()) throw UsageError(where + " must contain {source_text}");
  }

  const std::string& text() const { return text_; }
  bool has_placeholder() const { return !pieces_.empty(); }

  std::string render(const Segment& s) const {
    std::string out;
    for (const std::string& piece : pieces_) {
      out += piece;
      out += s.source_text;
    }
    out += literal_;
    return out;
  }

 private:
  std::string text_;
  std::vector<std::string> pieces_;  // literal text before each placeholder
  std::string literal_;              // trailing literal text
};

// Prompt slots. PcotChained uses both pcot_* prompts.
struct PromptTemplates {
  PromptTemplate ocr{"ocr", "<image>\nRecognize all text in this document image and output it in reading order.",
                     false, false};
  PromptTemplate mt{"mt", "Translate the following English document into Chinese.\n\n{source_text}", true, true};
  PromptTemplate pcot_recognize{
      "pcot_recognize", "<image>\nFirst, recognize all text in this document image and output it in reading order.",
      false, false};
  PromptTemplate pcot_translate{"pcot_translate", "Now translate the recognized text into Chinese.", true, false};
  PromptTemplate end_to_end{"end_to_end", "<image>\nTranslate the text in this document image into Chinese.", false,
                            false};
};

inline PromptTemplates prompt_templates_from_json(const json& j, PromptTemplates base = {}) {
  if (!j.is_object()) throw UsageError("prompt_templates must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!value.is_string()) throw UsageError("prompt template '" + key + "' must be a string");
    std::string text = value.get<std::string>();
    if (key == "ocr") {
      base.ocr = PromptTemplate(key, std::move(text), false, false);
    } else if (key == "mt") {
      base.mt = PromptTemplate(key, std::move(text), true, true);
    } else if (key == "pcot_recognize") {
      base.pcot_recognize = PromptTemplate(key, std::move(text), false, false);
    } else if (key == "pcot_translate") {
      base.pcot_translate = PromptTemplate(key, std::move(text), true, false);
    } else if (key == "end_to_end") {
      base.end_to_end = PromptTemplate(key, std::move(text), false, false);
    } else {
      throw UsageError("unknown prompt template '" + key +
                       "' (expected ocr, mt, pcot_recognize, pcot_translate or end_to_end)");
    }
  }
  return base;
}

inline json to_json(const PromptTemplates& t) {
  return {{"ocr", t.ocr.text()},
          {"mt", t.mt.text()},
          {"pcot_recognize", t.pcot_recognize.text()},
          {"pcot_translate", t.pcot_translate.text()},
          {"end_to_end", t.end_to_end.text()}};
}

inline TrainingExample build_example(const Segment& s, TaskKind task, const PromptTemplates& templates,
                                     TrackKind track = TrackKind::Track1WebDoc, Split split = Split::Train) {
  if (const auto field = missing_field(s, task); !field.empty()) {
    throw SchemaError(std::string(field), "segment '" + s.id + "': task " + std::string(to_string(task)) +
                                              " requires " + std::string(field));
  }
  TrainingExample e{s.id, s.image_ref, {}, task, track, split};
  const auto turn = [&](Role r, std::string content) { e.turns.push_back({r, std::move(content)}); };
  switch (task) {
    case TaskKind::OcrOnly:
      turn(Role::User, templates.ocr.render(s));
      turn(Role::Assistant, s.source_text);
      break;
    case TaskKind::MtOnly:
      turn(Role::User, templates.mt.render(s));
      turn(Role::Assistant, *s.reference_translation);
      break;
    case TaskKind::PcotChained:
      turn(Role::User, templates.pcot_recognize.render(s));
      turn(Role::Assistant, s.source_text);
      turn(Role::User, templates.pcot_translate.render(s));
      turn(Role::Assistant, *s.reference_translation);
      break;
    case TaskKind::EndToEnd:
      turn(Role::User, templates.end_to_end.render(s));
      turn(Role::Assistant, *s.reference_translation);
      break;
  }
  validate(e);
  return e;
}

template <>
struct JsonlSchema<TrainingExample> {
  static TrainingExample from_json(const json& j) {
    TrainingExample e;
    e.example_id = field::identifier(j, "example_id");
    e.track = parse_track(field::identifier(j, "track"));
    e.split = parse_split(field::identifier(j, "split"));
    e.task = parse_task_kind(field::identifier(j, "task"));
    e.image_ref = field::optional_text(j, "image_ref");
    const json& turns = field::require(j, "turns");
    if (!turns.is_array()) throw SchemaError("turns", "field 'turns' must be an array");
    for (const json& t : turns) {
      const std::string role = field::identifier(t, "role");
      if (role != "user" && role != "assistant") throw SchemaError("role", "unknown role '" + role + "'");
      e.turns.push_back({role == "user" ? Role::User : Role::Assistant, field::text(t, "content")});
    }
    validate(e);
    return e;
  }

  static json to_json(const TrainingExample& e) {
    validate(e);
    json j = {{"example_id", e.example_id},
              {"track", to_string(e.track)},
              {"split", to_string(e.split)},
              {"task", to_string(e.task)}};
    if (e.image_ref) j["image_ref"] = *e.image_ref;
    json turns = json::array();
    for (const Turn& t : e.turns) turns.push_back({{"role", to_string(t.role)}, {"content", t.content}});
    j["turns"] = std::move(turns);
    return j;
  }
};

struct MixtureSpec {
  std::map<TaskKind, double> weights = {{TaskKind::PcotChained, 1.0}};
  std::uint64_t seed = 0;
  PromptTemplates templates;

  void validate() const {
    bool any = false;
    for (const auto& [task, w] : weights) {
      if (!(w >= 0.0) || w == std::numeric_limits<double>::infinity()) {
        throw UsageError("weight for " + std::string(to_string(task)) + " must be a finite non-negative number");
      }
      any = any || w > 0.0;
    }
    if (!any) throw UsageError("mixture needs at least one positive weight");
  }
};

// {"weights": {"pcot_chained": 0.7, ...}, "seed": 7, "prompt_templates": {...}}
inline MixtureSpec mixture_spec_from_json(const json& j) {
  if (!j.is_object()) throw UsageError("mixture spec must be a JSON object");
  MixtureSpec spec;
  for (const auto& [key, value] : j.items()) {
    if (key == "weights") {
      if (!value.is_object()) throw UsageError("mixture weights must be a JSON object");
      spec.weights.clear();
      for (const auto& [task, w] : value.items()) {
        if (!w.is_number()) throw UsageError("weight for '" + task + "' must be a number");
        spec.weights[parse_task_kind(task)] = w.get<double>();
      }
    } else if (key == "seed") {
      if (!value.is_number_integer()) throw UsageError("mixture seed must be an integer");
      spec.seed = value.is_number_unsigned() ? value.get<std::uint64_t>()
                                             : static_cast<std::uint64_t>(value.get<std::int64_t>());
    } else if (key == "prompt_templates") {
      spec.templates = prompt_templates_from_json(value);
    } else {
      throw UsageError("unknown mixture spec key '" + key + "'");
    }
  }
  spec.validate();
  return spec;
}

inline MixtureSpec load_mixture_spec(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open mixture spec");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string(), 0, "", e.what());
  }
  return mixture_spec_from_json(j);
}

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

struct MixtureSummary {
  std::size_t input = 0;
  std::array<std::size_t, 4> counts{};
  std::size_t skipped = 0;
  std::vector<std::string> skipped_ids;  // first kMaxListed only

  static constexpr std::size_t kMaxListed = 20;

  std::size_t emitted() const { return input - skipped; }
  std::size_t count(TaskKind t) const { return counts[static_cast<std::size_t>(t)]; }

  json to_json() const {
    json by_task = json::object();
    for (TaskKind t : kAllTasks) by_task[std::string(to_string(t))] = count(t);
    return {{"input", input}, {"emitted", emitted()}, {"skipped", skipped}, {"by_task", std::move(by_task)},
            {"skipped_ids", skipped_ids}};
  }
};

// Assigns each segment a task by one seeded draw from the normalized weights,
// restricted to the tasks the segment can support. One draw is consumed per
// segment, skipped or not, so a segment's task depends only on its position.
class MixtureBuilder {
 public:
  MixtureBuilder(MixtureSpec spec, TrackKind track, Split split)
      : spec_(std::move(spec)), track_(track), split_(split), rng_(spec_.seed) {
    spec_.validate();
    double total = 0.0;
    for (const auto& [task, w] : spec_.weights) total += w;
    for (const auto& [task, w] : spec_.weights) normalized_[static_cast<std::size_t>(task)] = w / total;
  }

  std::optional<TaskKind> draw(const Segment& s) {
    const double u = rng_.uniform();
    double feasible_total = 0.0;
    for (TaskKind t : kAllTasks) {
      if (weight(t) > 0.0 && feasible(s, t)) feasible_total += weight(t);
    }
    if (feasible_total == 0.0) return std::nullopt;
    const double target = u * feasible_total;
    double acc = 0.0;
    std::optional<TaskKind> pick;
    for (TaskKind t : kAllTasks) {
      if (weight(t) <= 0.0 || !feasible(s, t)) continue;
      acc += weight(t);
      pick = t;
      if (target < acc) break;
    }
    return pick;
  }

  // The example for the next segment, or nullopt when no weighted task fits it.
  std::optional<TrainingExample> add(const Segment& s) {
    ++summary_.input;
    const auto task = draw(s);
    if (!task) {
      ++summary_.skipped;
      if (summary_.skipped_ids.size() < MixtureSummary::kMaxListed) summary_.skipped_ids.push_back(s.id);
      return std::nullopt;
    }
    ++summary_.counts[static_cast<std::size_t>(*task)];
    return build_example(s, *task, spec_.templates, track_, split_);
  }

  const MixtureSummary& summary() const { return summary_; }

 private:
  double weight(TaskKind t) const { return normalized_[static_cast<std::size_t>(t)]; }

  MixtureSpec spec_;
  TrackKind track_;
  Split split_;
  SplitMix64 rng_;
  std::array<double, 4> normalized_{};
  MixtureSummary summary_;
};

struct Mixture {
  std::vector<TrainingExample> examples;
  MixtureSummary summary;
};

inline Mixture build_mixture(const std::vector<Segment>& segments, const MixtureSpec& spec, TrackKind track,
                             Split split = Split::Train) {
  MixtureBuilder builder(spec, track, split);
  Mixture out;
  for (const Segment& s : segments) {
    if (auto e = builder.add(s)) out.examples.push_back(std::move(*e));
  }
  out.summary = builder.summary();
  return out;
}

// Streams segments from `in` to examples in `out` without holding either file.
// `on_skip` sees every segment that no weighted task fits.
template <typename OnSkip>
MixtureSummary build_mixture_file(const std::filesystem::path& in, const std::filesystem::path& out,
                                  const MixtureSpec& spec, TrackKind track, Split split, OnSkip&& on_skip) {
  MixtureBuilder builder(spec, track, split);
  JsonlReader<Segment> reader(in);
  JsonlWriter<TrainingExample> writer(out);
  reader.for_each([&](Record<Segment>&& rec) {
    if (auto e = builder.add(rec.value)) {
      writer.write(*e);
    } else {
      on_skip(rec.value, rec.line);
    }
  });
  writer.close();
  return builder.summary();
}

inline MixtureSummary build_mixture_file(const std::filesystem::path& in, const std::filesystem::path& out,
                                         const MixtureSpec& spec, TrackKind track, Split split) {
  return build_mixture_file(in, out, spec, track, split, [](const Segment&, std::size_t) {});
}

// Example counts by track and split, as in a dataset statistics table, plus
// per-task totals.
struct DatasetStats {
  std::size_t total = 0;
  std::array<std::array<std::size_t, 3>, 2> by_track_split{};
  std::array<std::size_t, 4> by_task{};

  void add(const TrainingExample& e) {
    ++total;
    ++by_track_split[static_cast<std::size_t>(e.track)][static_cast<std::size_t>(e.split)];
    ++by_task[static_cast<std::size_t>(e.task)];
  }

  std::size_t count(TrackKind t, Split s) const {
    return by_track_split[static_cast<std::size_t>(t)][static_cast<std::size_t>(s)];
  }
  std::size_t count(TrackKind t) const {
    std::size_t n = 0;
    for (std::size_t c : by_track_split[static_cast<std::size_t>(t)]) n += c;
    return n;
  }
  std::size_t count(Split s) const { return count(TrackKind::Track1WebDoc, s) + count(TrackKind::Track2Arxiv, s); }
  std::size_t count(TaskKind t) const { return by_task[static_cast<std::size_t>(t)]; }

  json to_json() const {
    constexpr std::array<TrackKind, 2> tracks = {TrackKind::Track1WebDoc, TrackKind::Track2Arxiv};
    constexpr std::array<Split, 3> splits = {Split::Train, Split::Valid, Split::Test};
    json table = json::object();
    json by_track = json::object();
    for (TrackKind t : tracks) {
      json row = json::object();
      for (Split s : splits) row[std::string(to_string(s))] = count(t, s);
      table[std::string(to_string(t))] = std::move(row);
      by_track[std::string(to_string(t))] = count(t);
    }
    json by_split = json::object();
    for (Split s : splits) by_split[std::string(to_string(s))] = count(s);
    json tasks = json::object();
    for (TaskKind t : kAllTasks) tasks[std::string(to_string(t))] = count(t);
    return {{"total", total}, {"by_track", std::move(by_track)}, {"by_split", std::move(by_split)},
            {"by_task", std::move(tasks)}, {"table", std::move(table)}};
  }
};

template <typename Range>
DatasetStats dataset_stats(const Range& examples) {
  DatasetStats stats;
  for (const TrainingExample& e : examples) stats.add(e);
  return stats;
}

inline DatasetStats dataset_stats_file(const std::filesystem::path& path) {
  DatasetStats stats;
  JsonlReader<TrainingExample>(path).for_each([&](Record<TrainingExample>&& r) { stats.add(r.value); });
  return stats;
}

}  // namespace dimt
