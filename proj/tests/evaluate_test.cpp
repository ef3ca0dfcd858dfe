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

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "dimt/evaluate.hpp"
#include "oracle/bleu_oracle.hpp"
#include "support/temp_dir.hpp"

using dimt::Hypothesis;
using dimt::Segment;
using dimt::Split;
using dimt::SubTask;
using dimt::TrackKind;

namespace {

std::vector<Segment> references() {
  return {{"a", "the cat sat on the mat", "猫坐在垫子上", std::nullopt},
          {"b", "a quick brown fox jumps over the lazy dog", "敏捷的棕色狐狸", std::nullopt},
          {"c", "results are shown in table two", "结果见表二", std::nullopt}};
}

std::string read_file(const std::filesystem::path& p) { return test_support::TempDir::slurp(p); }

}  // namespace

TEST(ScoreSubtask, IdenticalHypothesesScoreHundred) {
  test_support::TempDir dir;
  const auto refs = references();
  std::vector<Hypothesis> hyps;
  for (const auto& s : refs) hyps.push_back({s.id, *s.reference_translation});
  dimt::write_jsonl<Segment>(refs, dir.path() / "ref.jsonl");
  dimt::write_jsonl<Hypothesis>(hyps, dir.path() / "hyp.jsonl");
  const auto r = dimt::score_subtask(dir.path() / "hyp.jsonl", dir.path() / "ref.jsonl", SubTask::MT,
                                     dimt::BleuConfig::corpus_default());
  EXPECT_DOUBLE_EQ(r.bleu_percent, 100.0);
  EXPECT_EQ(r.pairs, 3u);
}

TEST(ScoreSubtask, MatchesBruteForceOracle) {
  // one perfect, one partial, one zero-overlap hypothesis, OCR sub-task
  const std::vector<Hypothesis> hyps = {{"a", "the cat sat on the mat"},
                                        {"b", "a quick red fox jumped over a lazy dog"},
                                        {"c", "nothing matches here"}};
  const auto refs = references();
  for (const bool floor : {false, true}) {
    auto config = dimt::BleuConfig::corpus_default();
    if (floor) config.smoothing = dimt::Smoothing::FloorEpsilon;
    const auto r = dimt::score_pairs(hyps, refs, SubTask::OCR, config);
    std::vector<std::pair<oracle::Tokens, std::vector<oracle::Tokens>>> pairs;
    for (std::size_t i = 0; i < 3; ++i) pairs.push_back({oracle::split(hyps[i].text), {oracle::split(refs[i].source_text)}});
    EXPECT_NEAR(r.bleu_percent, 100.0 * oracle::corpus_bleu(pairs, 4, floor), 1e-9) << floor;
    EXPECT_GT(r.bleu_percent, 0.0);
    EXPECT_LT(r.bleu_percent, 100.0);
  }
}

TEST(ScoreSubtask, DisjointIdsAreAnAlignmentError) {
  test_support::TempDir dir;
  const std::vector<Hypothesis> hyps = {{"x", "foo"}, {"y", "bar"}};
  try {
    dimt::score_pairs(hyps, references(), SubTask::MT, {}, {false, dir.path() / "diag.json"});
    FAIL() << "expected AlignmentError";
  } catch (const dimt::AlignmentError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("missing: a, b, c"), std::string::npos) << what;
  }
  const auto diag = dimt::json::parse(read_file(dir.path() / "diag.json"));
  EXPECT_EQ(diag.at("missing_hypotheses").size(), 3u);
  EXPECT_EQ(diag.at("unknown_hypotheses").size(), 2u);
}

TEST(ScoreSubtask, MissingIdListCapsAtTen) {
  std::vector<Segment> refs;
  for (int i = 0; i < 15; ++i) refs.push_back({"r" + std::to_string(i), "x", "y", std::nullopt});
  const std::vector<Hypothesis> hyps = {{"r0", "y"}};
  try {
    dimt::score_pairs(hyps, refs, SubTask::MT, {});
    FAIL();
  } catch (const dimt::AlignmentError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("r10, ..."), std::string::npos) << what;
    EXPECT_EQ(what.find("r11"), std::string::npos);
  }
}

TEST(ScoreSubtask, AllowPartialScoresIntersection) {
  const std::vector<Hypothesis> hyps = {{"a", "猫坐在垫子上"}, {"zz", "extra"}};
  const auto r = dimt::score_pairs(hyps, references(), SubTask::MT, dimt::BleuConfig::corpus_default(),
                                   {true, {}});
  EXPECT_EQ(r.pairs, 1u);
  EXPECT_DOUBLE_EQ(r.bleu_percent, 100.0);
  EXPECT_EQ(r.missing_hypotheses, (std::vector<std::string>{"b", "c"}));
  EXPECT_EQ(r.unknown_hypotheses, std::vector<std::string>{"zz"});
}

TEST(ScoreSubtask, InvariantToHypothesisOrder) {
  std::vector<Hypothesis> hyps = {{"a", "猫坐在 垫子"}, {"b", "棕色狐狸"}, {"c", "结果见表三"}};
  const auto config = dimt::BleuConfig::corpus_default();
  const double base = dimt::score_pairs(hyps, references(), SubTask::MT, config).bleu_percent;
  std::mt19937 rng(4);
  for (int i = 0; i < 10; ++i) {
    std::shuffle(hyps.begin(), hyps.end(), rng);
    EXPECT_EQ(dimt::score_pairs(hyps, references(), SubTask::MT, config).bleu_percent, base);
  }
}

TEST(ScoreSubtask, DuplicatesAndMissingReferenceFields) {
  const std::vector<Hypothesis> dup = {{"a", "x"}, {"a", "y"}};
  EXPECT_THROW(dimt::score_pairs(dup, references(), SubTask::MT, {}), dimt::AlignmentError);
  const std::vector<Segment> no_ref = {{"a", "src", std::nullopt, std::nullopt}};
  const std::vector<Hypothesis> one = {{"a", "x"}};
  EXPECT_THROW(dimt::score_pairs(one, no_ref, SubTask::MT, {}), dimt::SchemaError);
}

TEST(Fingerprint, ChangesWithEveryConfigField) {
  std::set<std::string> seen;
  std::size_t configs = 0;
  for (int order = 1; order <= 9; ++order) {
    for (auto smoothing : {dimt::Smoothing::None, dimt::Smoothing::FloorEpsilon}) {
      for (double eps : {0.1, 0.01, 1.0}) {
        for (auto tok : {dimt::TokenizationScheme::Whitespace, dimt::TokenizationScheme::CjkChar,
                         dimt::TokenizationScheme::Mixed}) {
          seen.insert(dimt::config_fingerprint({order, smoothing, eps, tok}));
          ++configs;
        }
      }
    }
  }
  EXPECT_EQ(seen.size(), configs);
  EXPECT_EQ(dimt::config_fingerprint({}), dimt::config_fingerprint({}));
  EXPECT_EQ(dimt::config_fingerprint({}).rfind("sha256:", 0), 0u);
}

TEST(Report, AllAbsentRowRendersSlashes) {
  auto report = dimt::make_report(dimt::BleuConfig::corpus_default());
  report.rows.push_back({"base", {}});
  const std::string md = dimt::render_report(report, dimt::ReportFormat::Markdown);
  EXPECT_NE(md.find("| base | / | / | / | / | / | / |"), std::string::npos) << md;
}

TEST(Report, MarkdownMatchesGolden) {
  auto report = dimt::make_report(dimt::BleuConfig::corpus_default());
  report.set("base", TrackKind::Track1WebDoc, Split::Valid, SubTask::OCR, 70.4812);
  report.set("base", TrackKind::Track1WebDoc, Split::Valid, SubTask::MT, 48.125);
  report.set("base", TrackKind::Track2Arxiv, Split::Test, SubTask::MT, 55.0);
  report.set("+MBR", TrackKind::Track1WebDoc, Split::Valid, SubTask::MT, 49.999);
  report.set("+MBR", TrackKind::Track2Arxiv, Split::Valid, SubTask::MT, 0.0);
  const std::string md = dimt::render_report(report, dimt::ReportFormat::Markdown);
  EXPECT_EQ(md, dimt::render_report(report, dimt::ReportFormat::Markdown));
  EXPECT_EQ(md, read_file(std::filesystem::path(DIMT_TEST_DATA_DIR) / "golden" / "report.md"));
}

TEST(Report, Track2HasNoOcrColumn) {
  auto report = dimt::make_report({});
  EXPECT_THROW(report.set("x", TrackKind::Track2Arxiv, Split::Valid, SubTask::OCR, 1.0), dimt::UsageError);
  EXPECT_THROW(report.set("x", TrackKind::Track1WebDoc, Split::Train, SubTask::MT, 1.0), dimt::UsageError);
  EXPECT_THROW(report.set("x", TrackKind::Track1WebDoc, Split::Test, SubTask::MT, 100.5), dimt::UsageError);
}

TEST(Report, CsvAndJsonCarryTheSameValues) {
  auto report = dimt::make_report({});
  report.set("sys, \"quoted\"", TrackKind::Track1WebDoc, Split::Test, SubTask::OCR, 12.345);
  report.set("sys, \"quoted\"", TrackKind::Track2Arxiv, Split::Test, SubTask::MT, 99.999);
  const std::string csv = dimt::render_report(report, dimt::ReportFormat::Csv);
  EXPECT_EQ(csv,
            "system,track1_valid_ocr,track1_valid_mt,track1_test_ocr,track1_test_mt,track2_valid_mt,track2_test_mt\n"
            "\"sys, \"\"quoted\"\"\",,,12.35,,,100.00\n");
  const auto j = dimt::json::parse(dimt::render_report(report, dimt::ReportFormat::Json));
  const auto& cells = j.at("rows").at(0).at("cells");
  EXPECT_DOUBLE_EQ(cells.at("track1/test/ocr").get<double>(), 12.35);
  EXPECT_DOUBLE_EQ(cells.at("track2/test/mt").get<double>(), 100.0);
  EXPECT_TRUE(cells.at("track1/valid/mt").is_null());
}

TEST(Report, JsonRoundTrip) {
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> value(0.0, 100.0);
  for (int trial = 0; trial < 50; ++trial) {
    dimt::BleuConfig config;
    config.max_order = 1 + trial % 9;
    auto report = dimt::make_report(config);
    for (int row = 0; row < 3; ++row) {
      for (const auto& col : dimt::kColumns) {
        if (rng() % 3) report.set("sys" + std::to_string(row), col.track, col.split, col.sub_task, value(rng));
      }
    }
    const std::string text = dimt::render_report(report, dimt::ReportFormat::Json);
    const auto parsed = dimt::parse_report(text);
    EXPECT_EQ(parsed, report);
    EXPECT_EQ(dimt::render_report(parsed, dimt::ReportFormat::Json), text);
  }
  EXPECT_THROW(dimt::parse_report("{\"rows\": []}"), dimt::SchemaError);
  EXPECT_THROW(dimt::parse_report("nope"), dimt::ParseError);
}

TEST(BleuConfigJson, RoundTripAndValidation) {
  dimt::BleuConfig c{3, dimt::Smoothing::FloorEpsilon, 0.5, dimt::TokenizationScheme::CjkChar};
  const auto back = dimt::bleu_config_from_json(dimt::to_json(c));
  EXPECT_EQ(dimt::config_fingerprint(back), dimt::config_fingerprint(c));
  EXPECT_THROW(dimt::bleu_config_from_json(dimt::json::parse(R"({"max_order": 0})")), dimt::UsageError);
  EXPECT_THROW(dimt::bleu_config_from_json(dimt::json::parse(R"({"order": 4})")), dimt::UsageError);
}
