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
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dimt/core.hpp"
#include "dimt/error.hpp"
#include "dimt/normalize.hpp"

namespace dimt {

enum class Smoothing { None, FloorEpsilon };

inline std::string_view to_string(Smoothing s) { return s == Smoothing::None ? "none" : "floor"; }

inline Smoothing parse_smoothing(std::string_view s) {
  if (s == "none") return Smoothing::None;
  if (s == "floor" || s == "floor-epsilon") return Smoothing::FloorEpsilon;
  throw UsageError("unknown smoothing '" + std::string(s) + "' (expected none or floor)");
}

struct BleuConfig {
  int max_order = 4;
  Smoothing smoothing = Smoothing::FloorEpsilon;
  double epsilon = 0.1;
  TokenizationScheme tokenization = TokenizationScheme::Mixed;

  // Corpus-level evaluation scores unsmoothed.
  static BleuConfig corpus_default() {
    BleuConfig c;
    c.smoothing = Smoothing::None;
    return c;
  }

  void validate() const {
    if (max_order < 1 || max_order > 9) throw UsageError("BLEU max_order must be in [1, 9]");
    if (smoothing == Smoothing::FloorEpsilon && !(epsilon > 0.0)) {
      throw UsageError("BLEU floor smoothing requires epsilon > 0");
    }
  }

  friend bool operator==(const BleuConfig&, const BleuConfig&) = default;
};

struct BleuScore {
  double score = 0.0;
  std::vector<double> precisions;
  double brevity_penalty = 1.0;
  std::size_t hypothesis_length = 0;
  std::size_t reference_length = 0;
};

// Sufficient statistics; corpus BLEU sums these before scoring.
struct BleuStats {
  std::vector<std::size_t> matches;
  std::vector<std::size_t> totals;
  std::size_t hypothesis_length = 0;
  std::size_t reference_length = 0;

  explicit BleuStats(int max_order = 4) : matches(max_order, 0), totals(max_order, 0) {}

  BleuStats& operator+=(const BleuStats& o) {
    for (std::size_t n = 0; n < matches.size(); ++n) {
      matches[n] += o.matches[n];
      totals[n] += o.totals[n];
    }
    hypothesis_length += o.hypothesis_length;
    reference_length += o.reference_length;
    return *this;
  }
};

// Maps token strings to dense ids so n-grams can be keyed as u32strings.
class Vocabulary {
 public:
  char32_t id(const std::string& token) {
    const auto [it, inserted] = ids_.try_emplace(token, static_cast<char32_t>(ids_.size()));
    return it->second;
  }

 private:
  std::unordered_map<std::string, char32_t> ids_;
};

// Per-order n-gram counts of one tokenized sentence.
class NgramProfile {
 public:
  NgramProfile(const TokenSequence& seq, Vocabulary& vocab, int max_order)
      : length_(seq.size()), counts_(max_order) {
    std::u32string ids;
    ids.reserve(seq.size());
    for (const std::string& t : seq.tokens) ids.push_back(vocab.id(t));
    for (int n = 1; n <= max_order; ++n) {
      if (ids.size() < static_cast<std::size_t>(n)) break;
      auto& table = counts_[n - 1];
      for (std::size_t i = 0; i + n <= ids.size(); ++i) ++table[ids.substr(i, n)];
    }
  }

  std::size_t length() const { return length_; }
  int max_order() const { return static_cast<int>(counts_.size()); }
  const std::unordered_map<std::u32string, std::uint32_t>& counts(int order) const { return counts_[order - 1]; }

  std::size_t total(int order) const {
    return length_ >= static_cast<std::size_t>(order) ? length_ - order + 1 : 0;
  }

 private:
  std::size_t length_;
  std::vector<std::unordered_map<std::u32string, std::uint32_t>> counts_;
};

// Clipped n-gram counts of `hyp` against the per-n-gram maximum over `refs`.
// Reference length is the closest reference length, shorter on ties.
inline BleuStats collect_stats(const NgramProfile& hyp, std::span<const NgramProfile* const> refs) {
  const int max_order = hyp.max_order();
  BleuStats stats(max_order);
  stats.hypothesis_length = hyp.length();

  std::size_t best = refs.front()->length();
  const auto distance = [&](std::size_t len) {
    return len > hyp.length() ? len - hyp.length() : hyp.length() - len;
  };
  for (const NgramProfile* r : refs) {
    const std::size_t len = r->length();
    if (distance(len) < distance(best) || (distance(len) == distance(best) && len < best)) best = len;
  }
  stats.reference_length = best;

  for (int n = 1; n <= max_order; ++n) {
    stats.totals[n - 1] = hyp.total(n);
    std::size_t matched = 0;
    for (const auto& [gram, count] : hyp.counts(n)) {
      std::uint32_t max_ref = 0;
      for (const NgramProfile* r : refs) {
        const auto& table = r->counts(n);
        if (const auto it = table.find(gram); it != table.end()) max_ref = std::max(max_ref, it->second);
      }
      matched += std::min(count, max_ref);
    }
    stats.matches[n - 1] = matched;
  }
  return stats;
}

// An order with no hypothesis n-grams contributes precision 1. A zero-match
// order scores 0 unsmoothed, or epsilon / total with FloorEpsilon. An empty
// hypothesis scores 0 and reports the brevity-penalty limit (0, or 1 when the
// reference is empty too).
inline BleuScore score_from_stats(const BleuStats& stats, const BleuConfig& config) {
  const int max_order = config.max_order;
  BleuScore s;
  s.hypothesis_length = stats.hypothesis_length;
  s.reference_length = stats.reference_length;
  s.precisions.assign(max_order, 0.0);

  if (stats.hypothesis_length == 0) {
    s.score = 0.0;
    s.brevity_penalty = stats.reference_length == 0 ? 1.0 : 0.0;
    return s;
  }

  s.brevity_penalty =
      stats.hypothesis_length >= stats.reference_length
          ? 1.0
          : std::exp(1.0 - static_cast<double>(stats.reference_length) / static_cast<double>(stats.hypothesis_length));

  double log_sum = 0.0;
  bool zero = false;
  for (int n = 0; n < max_order; ++n) {
    const double total = static_cast<double>(stats.totals[n]);
    const double matched = static_cast<double>(stats.matches[n]);
    double p;
    if (stats.totals[n] == 0) {
      p = 1.0;
    } else if (stats.matches[n] == 0) {
      p = config.smoothing == Smoothing::FloorEpsilon ? config.epsilon / total : 0.0;
    } else {
      p = matched / total;
    }
    s.precisions[n] = std::min(p, 1.0);
    if (p == 0.0) {
      zero = true;
    } else {
      log_sum += std::log(p);
    }
  }
  s.score = zero ? 0.0 : std::clamp(s.brevity_penalty * std::exp(log_sum / max_order), 0.0, 1.0);
  return s;
}

inline TokenSequence prepare(std::string_view text, TokenizationScheme scheme) {
  return tokenize(normalize_nfc(text), scheme);
}

inline BleuStats sentence_stats(std::string_view hypothesis, std::span<const std::string> references,
                                const BleuConfig& config) {
  if (references.empty()) throw UsageError("sentence_bleu requires at least one reference");
  Vocabulary vocab;
  const NgramProfile hyp(prepare(hypothesis, config.tokenization), vocab, config.max_order);
  std::vector<NgramProfile> refs;
  refs.reserve(references.size());
  for (const std::string& r : references) refs.emplace_back(prepare(r, config.tokenization), vocab, config.max_order);
  std::vector<const NgramProfile*> ptrs;
  for (const NgramProfile& r : refs) ptrs.push_back(&r);
  return collect_stats(hyp, ptrs);
}

inline BleuScore sentence_bleu(std::string_view hypothesis, std::span<const std::string> references,
                               const BleuConfig& config = {}) {
  config.validate();
  return score_from_stats(sentence_stats(hypothesis, references, config), config);
}

inline BleuScore sentence_bleu(std::string_view hypothesis, std::initializer_list<std::string> references,
                               const BleuConfig& config = {}) {
  return sentence_bleu(hypothesis, std::span<const std::string>(references.begin(), references.size()), config);
}

struct BleuPair {
  std::string hypothesis;
  std::vector<std::string> references;
};

// Micro-averaged corpus BLEU: counts and lengths are summed over all pairs
// before precisions and the brevity penalty are computed.
inline BleuScore corpus_bleu(std::span<const BleuPair> pairs, const BleuConfig& config) {
  config.validate();
  if (pairs.empty()) throw UsageError("corpus_bleu requires a non-empty corpus");
  BleuStats total(config.max_order);
  for (const BleuPair& p : pairs) {
    if (p.references.empty()) throw UsageError("every corpus pair needs at least one reference");
    total += sentence_stats(p.hypothesis, p.references, config);
  }
  return score_from_stats(total, config);
}

}  // namespace dimt
