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
#include <atomic>
#include <cstddef>
#include <exception>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "dimt/bleu.hpp"
#include "dimt/error.hpp"
#include "dimt/jsonl.hpp"

namespace dimt {

enum class Origin { Deterministic, Sampled };

inline std::string_view to_string(Origin o) { return o == Origin::Deterministic ? "deterministic" : "sampled"; }

struct Candidate {
  std::string text;
  Origin origin = Origin::Sampled;
  std::optional<int> sample_index;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

// How a candidate set was collected. Absent for hand-written sets.
struct GenerationInfo {
  std::string model;
  double temperature = 0.0;
  double top_p = 0.0;
  int num_samples = 0;
  bool deterministic_pass = true;
  int requests = 0;
  int retries = 0;

  friend bool operator==(const GenerationInfo&, const GenerationInfo&) = default;
};

struct CandidateSet {
  std::string segment_id;
  std::vector<Candidate> candidates;
  std::optional<GenerationInfo> generation;

  friend bool operator==(const CandidateSet&, const CandidateSet&) = default;
};

inline void validate(const CandidateSet& set) {
  const std::string where = "candidate set '" + set.segment_id + "': ";
  if (set.candidates.empty()) throw UsageError(where + "no candidates");
  std::set<int> seen;
  for (std::size_t i = 0; i < set.candidates.size(); ++i) {
    const Candidate& c = set.candidates[i];
    if (c.origin == Origin::Deterministic) {
      if (i != 0) throw UsageError(where + "deterministic candidate must be first and unique");
      if (c.sample_index) throw UsageError(where + "deterministic candidate carries a sample_index");
    } else {
      if (!c.sample_index) throw UsageError(where + "sampled candidate " + std::to_string(i) + " lacks sample_index");
      if (!seen.insert(*c.sample_index).second) {
        throw UsageError(where + "duplicate sample_index " + std::to_string(*c.sample_index));
      }
    }
  }
}

struct MbrResult {
  std::string segment_id;
  std::size_t selected_index = 0;
  std::string selected_text;
  std::vector<double> expected_utilities;
  std::optional<std::vector<std::vector<double>>> utility_matrix;

  friend bool operator==(const MbrResult&, const MbrResult&) = default;
};

struct MbrOptions {
  BleuConfig bleu;
  bool keep_matrix = false;
};

// Expected utility of candidate i is its mean sentence BLEU as hypothesis
// against every other candidate as the sole reference. The argmax wins, ties
// go to the lowest index. A single candidate has utility 1 by convention.
inline MbrResult mbr_select(const CandidateSet& set, const MbrOptions& options = {}) {
  validate(set);
  options.bleu.validate();
  const std::size_t n = set.candidates.size();

  MbrResult result;
  result.segment_id = set.segment_id;
  result.expected_utilities.assign(n, 0.0);

  std::vector<std::vector<double>> matrix;
  if (n == 1) {
    result.expected_utilities[0] = 1.0;
    if (options.keep_matrix) matrix = {{1.0}};
  } else {
    Vocabulary vocab;
    std::vector<NgramProfile> profiles;
    profiles.reserve(n);
    for (const Candidate& c : set.candidates) {
      profiles.emplace_back(prepare(c.text, options.bleu.tokenization), vocab, options.bleu.max_order);
    }
    matrix.assign(n, std::vector<double>(n, 1.0));
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const NgramProfile* ref = &profiles[j];
        const double u = score_from_stats(collect_stats(profiles[i], std::span(&ref, 1)), options.bleu).score;
        matrix[i][j] = u;
        sum += u;
      }
      result.expected_utilities[i] = sum / static_cast<double>(n - 1);
    }
  }

  for (std::size_t i = 1; i < n; ++i) {
    if (result.expected_utilities[i] > result.expected_utilities[result.selected_index]) result.selected_index = i;
  }
  result.selected_text = set.candidates[result.selected_index].text;
  if (options.keep_matrix) result.utility_matrix = std::move(matrix);
  return result;
}

// Order-preserving parallel map of mbr_select. The error of the lowest failing
// index is rethrown with its segment id.
inline std::vector<MbrResult> mbr_batch(std::span<const CandidateSet> sets, const MbrOptions& options,
                                        std::size_t parallelism) {
  if (parallelism < 1) throw UsageError("mbr parallelism must be >= 1");
  std::vector<std::optional<MbrResult>> slots(sets.size());
  std::vector<std::exception_ptr> errors(sets.size());
  std::atomic<std::size_t> next{0};

  const auto work = [&] {
    for (std::size_t i = next++; i < sets.size(); i = next++) {
      try {
        slots[i] = mbr_select(sets[i], options);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min(parallelism, sets.size());
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  std::vector<MbrResult> out;
  out.reserve(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (errors[i]) {
      try {
        std::rethrow_exception(errors[i]);
      } catch (const Error& e) {
        throw Error(e.kind(), "segment '" + sets[i].segment_id + "': " + e.what());
      }
    }
    out.push_back(std::move(*slots[i]));
  }
  return out;
}

template <>
struct JsonlSchema<CandidateSet> {
  static CandidateSet from_json(const json& j) {
    CandidateSet set;
    set.segment_id = field::identifier(j, "segment_id");
    const json& cands = field::require(j, "candidates");
    if (!cands.is_array()) throw SchemaError("candidates", "field 'candidates' must be an array");
    for (const json& c : cands) {
      Candidate cand;
      cand.text = field::text(c, "text");
      const std::string origin = field::identifier(c, "origin");
      if (origin == "deterministic") {
        cand.origin = Origin::Deterministic;
      } else if (origin == "sampled") {
        cand.origin = Origin::Sampled;
      } else {
        throw SchemaError("origin", "unknown candidate origin '" + origin + "'");
      }
      if (const auto it = c.find("sample_index"); it != c.end() && !it->is_null()) {
        cand.sample_index = static_cast<int>(field::integer(c, "sample_index"));
      }
      set.candidates.push_back(std::move(cand));
    }
    if (const auto it = j.find("generation"); it != j.end() && !it->is_null()) {
      const json& g = *it;
      GenerationInfo info;
      info.model = field::identifier(g, "model");
      info.temperature = field::number(g, "temperature");
      info.top_p = field::number(g, "top_p");
      info.num_samples = static_cast<int>(field::integer(g, "num_samples"));
      info.deterministic_pass = field::boolean(g, "deterministic_pass");
      info.requests = static_cast<int>(field::integer(g, "requests"));
      info.retries = static_cast<int>(field::integer(g, "retries"));
      set.generation = info;
    }
    validate(set);
    return set;
  }

  static json to_json(const CandidateSet& set) {
    json cands = json::array();
    for (const Candidate& c : set.candidates) {
      json jc = {{"text", c.text}, {"origin", to_string(c.origin)}};
      if (c.sample_index) jc["sample_index"] = *c.sample_index;
      cands.push_back(std::move(jc));
    }
    json j = {{"segment_id", set.segment_id}, {"candidates", std::move(cands)}};
    if (set.generation) {
      const GenerationInfo& g = *set.generation;
      j["generation"] = {{"model", g.model},           {"temperature", g.temperature},
                         {"top_p", g.top_p},           {"num_samples", g.num_samples},
                         {"deterministic_pass", g.deterministic_pass},
                         {"requests", g.requests},     {"retries", g.retries}};
    }
    return j;
  }
};

template <>
struct JsonlSchema<MbrResult> {
  static MbrResult from_json(const json& j) {
    MbrResult r;
    r.segment_id = field::identifier(j, "segment_id");
    r.selected_index = static_cast<std::size_t>(field::integer(j, "selected_index"));
    r.selected_text = field::text(j, "selected_text");
    r.expected_utilities = field::require(j, "expected_utilities").get<std::vector<double>>();
    if (const auto it = j.find("utility_matrix"); it != j.end() && !it->is_null()) {
      r.utility_matrix = it->get<std::vector<std::vector<double>>>();
    }
    return r;
  }

  static json to_json(const MbrResult& r) {
    json j = {{"segment_id", r.segment_id},
              {"selected_index", r.selected_index},
              {"selected_text", r.selected_text},
              {"expected_utilities", r.expected_utilities}};
    if (r.utility_matrix) j["utility_matrix"] = *r.utility_matrix;
    return j;
  }
};

}  // namespace dimt
