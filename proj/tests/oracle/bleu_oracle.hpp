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

// Brute-force BLEU used only as a test oracle. Tokens are pre-split strings;
// n-grams are enumerated with nested loops and compared element by element.
// Conventions shared with the library:
//  - an order with zero hypothesis n-grams has precision 1 (nothing to match);
//  - FloorEpsilon replaces a zero-match precision with epsilon / total;
//  - the empty hypothesis scores 0;
//  - reference length is the closest reference length, ties to the shorter.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

using Tokens = std::vector<std::string>;

struct Counts {
  std::vector<double> matches;
  std::vector<double> totals;
  double hyp_len = 0;
  double ref_len = 0;
};

inline bool same_ngram(const Tokens& a, std::size_t i, const Tokens& b, std::size_t j, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) {
    if (a[i + k] != b[j + k]) return false;
  }
  return true;
}

inline std::size_t count_in(const Tokens& seq, const Tokens& src, std::size_t at, std::size_t n) {
  std::size_t c = 0;
  if (seq.size() < n) return 0;
  for (std::size_t j = 0; j + n <= seq.size(); ++j) {
    if (same_ngram(seq, j, src, at, n)) ++c;
  }
  return c;
}

inline Counts count(const Tokens& hyp, const std::vector<Tokens>& refs, int max_order) {
  Counts c;
  c.matches.assign(max_order, 0.0);
  c.totals.assign(max_order, 0.0);
  c.hyp_len = static_cast<double>(hyp.size());
  // closest reference length, shorter on ties
  std::size_t best = refs[0].size();
  for (const Tokens& r : refs) {
    const long d_new = std::labs(static_cast<long>(r.size()) - static_cast<long>(hyp.size()));
    const long d_best = std::labs(static_cast<long>(best) - static_cast<long>(hyp.size()));
    if (d_new < d_best || (d_new == d_best && r.size() < best)) best = r.size();
  }
  c.ref_len = static_cast<double>(best);

  for (int n = 1; n <= max_order; ++n) {
    if (hyp.size() < static_cast<std::size_t>(n)) continue;
    for (std::size_t i = 0; i + n <= hyp.size(); ++i) {
      c.totals[n - 1] += 1;
      // only score the first occurrence of each distinct n-gram, clipped
      bool seen = false;
      for (std::size_t p = 0; p < i; ++p) {
        if (same_ngram(hyp, p, hyp, i, n)) seen = true;
      }
      if (seen) continue;
      const std::size_t in_hyp = count_in(hyp, hyp, i, n);
      std::size_t max_ref = 0;
      for (const Tokens& r : refs) max_ref = std::max(max_ref, count_in(r, hyp, i, n));
      c.matches[n - 1] += static_cast<double>(std::min(in_hyp, max_ref));
    }
  }
  return c;
}

inline double score(const Counts& c, int max_order, bool floor_smoothing, double epsilon = 0.1) {
  if (c.hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < max_order; ++n) {
    double p;
    if (c.totals[n] == 0) {
      p = 1.0;
    } else if (c.matches[n] == 0) {
      if (!floor_smoothing) return 0.0;
      p = epsilon / c.totals[n];
    } else {
      p = c.matches[n] / c.totals[n];
    }
    log_sum += std::log(p);
  }
  const double bp = c.hyp_len >= c.ref_len ? 1.0 : std::exp(1.0 - c.ref_len / c.hyp_len);
  return bp * std::exp(log_sum / max_order);
}

inline double sentence_bleu(const Tokens& hyp, const std::vector<Tokens>& refs, int max_order, bool floor_smoothing) {
  return score(count(hyp, refs, max_order), max_order, floor_smoothing);
}

inline double corpus_bleu(const std::vector<std::pair<Tokens, std::vector<Tokens>>>& pairs, int max_order,
                          bool floor_smoothing) {
  Counts total;
  total.matches.assign(max_order, 0.0);
  total.totals.assign(max_order, 0.0);
  for (const auto& [hyp, refs] : pairs) {
    const Counts c = count(hyp, refs, max_order);
    for (int n = 0; n < max_order; ++n) {
      total.matches[n] += c.matches[n];
      total.totals[n] += c.totals[n];
    }
    total.hyp_len += c.hyp_len;
    total.ref_len += c.ref_len;
  }
  return score(total, max_order, floor_smoothing);
}

// Space-separated tokens (the randomized cases never contain other whitespace).
inline Tokens split(const std::string& s) {
  Tokens out;
  std::string cur;
  for (char ch : s) {
    if (ch == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace oracle
