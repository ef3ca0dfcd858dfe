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

#include <atomic>
#include <chrono>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "dimt/genclient.hpp"
#include "support/mock_endpoint.hpp"
#include "support/temp_dir.hpp"

using dimt::json;
using dimt::Origin;
using dimt::Segment;
using test_support::MockEndpoint;

namespace {

dimt::EndpointConfig endpoint_for(const MockEndpoint& mock) {
  dimt::EndpointConfig e;
  e.base_url = mock.base_url();
  e.model_name = "mock-model";
  e.timeout = std::chrono::seconds(10);
  e.backoff_base = std::chrono::milliseconds(1);
  e.backoff_cap = std::chrono::milliseconds(4);
  return e;
}

Segment text_segment(const std::string& id, const std::string& text) { return {id, text, std::nullopt, std::nullopt}; }

const dimt::PromptTemplate kPrompt{"generate", "Translate: {source_text}", true, true};

}  // namespace

TEST(GenClient, DefaultsGiveDeterministicPlusTenSamples) {
  MockEndpoint mock;
  const auto set = dimt::collect_candidates(text_segment("a", "hi"), "Translate: hi", {}, endpoint_for(mock));
  ASSERT_EQ(set.candidates.size(), 11u);
  EXPECT_EQ(set.candidates[0].origin, Origin::Deterministic);
  EXPECT_EQ(set.candidates[0].text, "det|Translate: hi");
  for (int i = 1; i <= 10; ++i) {
    EXPECT_EQ(set.candidates[static_cast<std::size_t>(i)].origin, Origin::Sampled);
    EXPECT_EQ(set.candidates[static_cast<std::size_t>(i)].sample_index, i - 1);
    EXPECT_EQ(set.candidates[static_cast<std::size_t>(i)].text, "s" + std::to_string(i - 1) + "|Translate: hi");
  }
  EXPECT_EQ(set.generation->requests, 11);
  EXPECT_EQ(set.generation->retries, 0);
  EXPECT_EQ(mock.ledger().size(), 11u);
}

TEST(GenClient, DeterministicOnly) {
  MockEndpoint mock;
  dimt::SamplingConfig s;
  s.num_samples = 0;
  const auto set = dimt::collect_candidates(text_segment("a", "hi"), "p", s, endpoint_for(mock));
  ASSERT_EQ(set.candidates.size(), 1u);
  EXPECT_EQ(set.candidates[0].origin, Origin::Deterministic);
}

TEST(GenClient, RequestParameters) {
  MockEndpoint mock;
  dimt::SamplingConfig s;
  s.num_samples = 3;
  s.seed = 100;
  dimt::collect_candidates(text_segment("a", "hi"), "p", s, endpoint_for(mock));
  int deterministic = 0;
  for (const json& r : mock.ledger()) {
    EXPECT_EQ(r.at("model"), "mock-model");
    EXPECT_EQ(r.at("n"), 1);
    EXPECT_EQ(r.at("max_tokens"), 8192);
    if (!r.contains("seed")) {
      ++deterministic;
      EXPECT_FALSE(r.contains("temperature"));
      EXPECT_FALSE(r.contains("top_p"));
      EXPECT_EQ(r.at("top_k"), 1);
    } else {
      EXPECT_DOUBLE_EQ(r.at("temperature").get<double>(), 0.7);
      EXPECT_DOUBLE_EQ(r.at("top_p").get<double>(), 0.95);
      EXPECT_GE(r.at("seed").get<int>(), 100);
      EXPECT_LT(r.at("seed").get<int>(), 103);
    }
  }
  EXPECT_EQ(deterministic, 1);
}

TEST(GenClient, ResponseTextIsNotAltered) {
  // decomposed é, CRLF, trailing spaces and an emoji come back byte for byte
  const std::string raw = "e\xCC\x81  \r\n\xF0\x9F\x98\x80 ";
  MockEndpoint mock([&](const json&, int, httplib::Response& res) { MockEndpoint::reply(res, raw); });
  dimt::SamplingConfig s;
  s.num_samples = 2;
  const auto set = dimt::collect_candidates(text_segment("a", "x"), "p", s, endpoint_for(mock));
  for (const auto& c : set.candidates) EXPECT_EQ(c.text, raw);
}

TEST(GenClient, RetriesThenSucceeds) {
  MockEndpoint mock([](const json& r, int call, httplib::Response& res) {
    if (call < 2) {
      res.status = 503;
      return;
    }
    MockEndpoint::echo(r, call, res);
  });
  auto endpoint = endpoint_for(mock);
  endpoint.max_concurrent_requests = 1;
  const auto set = dimt::collect_candidates(text_segment("a", "hi"), "p", {}, endpoint);
  EXPECT_EQ(set.candidates.size(), 11u);
  EXPECT_EQ(set.generation->retries, 2);
  EXPECT_EQ(set.generation->requests, 13);
  EXPECT_EQ(mock.ledger().size(), 13u);
}

TEST(GenClient, RateLimitAndMalformedRepliesAreRetried) {
  MockEndpoint mock([](const json& r, int call, httplib::Response& res) {
    if (call == 0) {
      res.status = 429;
    } else if (call == 1) {
      res.set_content("{\"choices\": []}", "application/json");
    } else if (call == 2) {
      res.set_content("not json", "text/plain");
    } else {
      MockEndpoint::echo(r, call, res);
    }
  });
  auto endpoint = endpoint_for(mock);
  endpoint.max_concurrent_requests = 1;
  dimt::SamplingConfig s;
  s.num_samples = 0;
  const auto set = dimt::collect_candidates(text_segment("a", "hi"), "p", s, endpoint);
  EXPECT_EQ(set.generation->retries, 3);
}

TEST(GenClient, ExhaustedRetriesNameSegmentAndKind) {
  MockEndpoint mock([](const json& r, int call, httplib::Response& res) {
    if (!r.contains("seed")) {
      res.status = 500;
      return;
    }
    MockEndpoint::echo(r, call, res);
  });
  auto endpoint = endpoint_for(mock);
  endpoint.max_retries = 2;
  try {
    dimt::collect_candidates(text_segment("seg-7", "hi"), "p", {}, endpoint);
    FAIL() << "expected CollectionError";
  } catch (const dimt::CollectionError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("seg-7"), std::string::npos);
    EXPECT_NE(what.find("deterministic"), std::string::npos);
    EXPECT_NE(what.find("3 attempts"), std::string::npos);
  }
}

TEST(GenClient, ClientErrorIsNotRetried) {
  MockEndpoint mock([](const json&, int, httplib::Response& res) {
    res.status = 401;
    res.set_content("{\"error\": \"bad key\"}", "application/json");
  });
  auto endpoint = endpoint_for(mock);
  endpoint.max_concurrent_requests = 1;
  EXPECT_THROW(dimt::collect_candidates(text_segment("a", "hi"), "p", {}, endpoint), dimt::ConfigError);
  EXPECT_EQ(mock.ledger().size(), 1u);
}

TEST(GenClient, UnreachableEndpointIsACollectionError) {
  dimt::EndpointConfig e;
  e.base_url = "http://127.0.0.1:1/v1";
  e.model_name = "m";
  e.max_retries = 1;
  e.timeout = std::chrono::seconds(2);
  e.backoff_base = std::chrono::milliseconds(1);
  e.backoff_cap = std::chrono::milliseconds(1);
  dimt::SamplingConfig s;
  s.num_samples = 0;
  EXPECT_THROW(dimt::collect_candidates(text_segment("a", "hi"), "p", s, e), dimt::CollectionError);
}

TEST(GenClient, BearerTokenSent) {
  MockEndpoint mock;
  auto endpoint = endpoint_for(mock);
  endpoint.auth_token = "sk-test";
  dimt::SamplingConfig s;
  s.num_samples = 0;
  dimt::collect_candidates(text_segment("a", "hi"), "p", s, endpoint);
  EXPECT_EQ(mock.auth_headers().at(0), "Bearer sk-test");
}

TEST(GenClient, ImagesAttachedAsContentParts) {
  test_support::TempDir dir;
  dir.write("pages/p1.png", "hello");
  MockEndpoint mock;
  dimt::SamplingConfig s;
  s.num_samples = 0;
  const Segment local{"a", "", std::nullopt, "pages/p1.png"};
  dimt::collect_candidates(local, "Read the page.", s, endpoint_for(mock), dir.path());
  const Segment remote{"b", "", std::nullopt, "https://example.org/p2.jpg"};
  dimt::collect_candidates(remote, "Read the page.", s, endpoint_for(mock));
  const auto ledger = mock.ledger();
  const json& content = ledger.at(0).at("messages").at(0).at("content");
  EXPECT_EQ(content.at(0).at("type"), "image_url");
  EXPECT_EQ(content.at(0).at("image_url").at("url"), "data:image/png;base64,aGVsbG8=");
  EXPECT_EQ(content.at(1).at("text"), "Read the page.");
  EXPECT_EQ(ledger.at(1).at("messages").at(0).at("content").at(0).at("image_url").at("url"),
            "https://example.org/p2.jpg");
  const Segment missing{"c", "", std::nullopt, "nope.png"};
  EXPECT_THROW(dimt::collect_candidates(missing, "x", s, endpoint_for(mock), dir.path()), dimt::IoError);
}

TEST(GenClient, ConfigValidation) {
  dimt::SamplingConfig s;
  s.temperature = 0;
  EXPECT_THROW(s.validate(), dimt::UsageError);
  s = {};
  s.top_p = 1.5;
  EXPECT_THROW(s.validate(), dimt::UsageError);
  s = {};
  s.num_samples = 0;
  s.deterministic_pass = false;
  EXPECT_THROW(s.validate(), dimt::UsageError);
  s = {};
  s.deterministic_params = {{"temperature", 0}};
  EXPECT_THROW(s.validate(), dimt::UsageError);

  EXPECT_EQ(dimt::parse_base_url("http://localhost:8000/v1/").origin, "http://localhost:8000");
  EXPECT_EQ(dimt::parse_base_url("http://localhost:8000/v1/").path, "/v1");
  EXPECT_EQ(dimt::parse_base_url("https://api.example.com").path, "");
  for (const char* bad : {"localhost:8000", "ftp://x", "http://", "http://h:99999", "http://h:x/v1"}) {
    EXPECT_THROW(dimt::parse_base_url(bad), dimt::UsageError) << bad;
  }
  dimt::EndpointConfig e;
  e.base_url = "http://h";
  e.model_name = "m";
  e.max_concurrent_requests = 0;
  EXPECT_THROW(e.validate(), dimt::UsageError);
}

TEST(GenClientBatch, BoundedConcurrencyAndInputOrder) {
  MockEndpoint mock;
  mock.set_delay(std::chrono::milliseconds(20));
  auto endpoint = endpoint_for(mock);
  endpoint.max_concurrent_requests = 2;
  std::vector<Segment> segs;
  for (int i = 0; i < 5; ++i) segs.push_back(text_segment("s" + std::to_string(i), "text " + std::to_string(i)));
  dimt::SamplingConfig s;
  s.num_samples = 2;
  const auto items = dimt::collect_batch(segs, kPrompt, s, endpoint);
  ASSERT_EQ(items.size(), 5u);
  for (int i = 0; i < 5; ++i) {
    const auto& item = items[static_cast<std::size_t>(i)];
    EXPECT_EQ(item.segment_id, "s" + std::to_string(i));
    ASSERT_TRUE(item.result);
    EXPECT_EQ(item.result->candidates[0].text, "det|Translate: text " + std::to_string(i));
  }
  EXPECT_LE(mock.max_in_flight(), 2);
  EXPECT_EQ(mock.max_in_flight(), 2);
}

TEST(GenClientBatch, EmptyInput) {
  MockEndpoint mock;
  EXPECT_TRUE(dimt::collect_batch({}, kPrompt, {}, endpoint_for(mock)).empty());
  EXPECT_TRUE(mock.ledger().empty());
}

TEST(GenClientBatch, PermanentFailureReportedInline) {
  MockEndpoint mock([](const json& r, int call, httplib::Response& res) {
    if (MockEndpoint::prompt_of(r).find("BAD") != std::string::npos) {
      res.status = 502;
      return;
    }
    MockEndpoint::echo(r, call, res);
  });
  auto endpoint = endpoint_for(mock);
  endpoint.max_retries = 1;
  std::vector<Segment> segs;
  for (int i = 0; i < 5; ++i) segs.push_back(text_segment("s" + std::to_string(i), i == 2 ? "BAD" : "ok"));
  dimt::SamplingConfig s;
  s.num_samples = 2;
  const auto items = dimt::collect_batch(segs, kPrompt, s, endpoint);
  int ok = 0;
  for (const auto& item : items) ok += item.result ? 1 : 0;
  EXPECT_EQ(ok, 4);
  ASSERT_TRUE(items[2].error);
  EXPECT_EQ(items[2].error->segment_id, "s2");
  EXPECT_FALSE(items[2].error->request_kind.empty());

  EXPECT_THROW(dimt::collect_batch(segs, kPrompt, s, endpoint, {{}, true}), dimt::CollectionError);
}

TEST(GenClientBatch, RequestCountInvariant) {
  std::atomic<int> failures{0};
  MockEndpoint mock([&](const json& r, int call, httplib::Response& res) {
    if (call % 3 == 1) {
      ++failures;
      res.status = 503;
      return;
    }
    MockEndpoint::echo(r, call, res);
  });
  auto endpoint = endpoint_for(mock);
  endpoint.max_concurrent_requests = 3;
  std::vector<Segment> segs;
  for (int i = 0; i < 4; ++i) segs.push_back(text_segment("s" + std::to_string(i), "t"));
  dimt::SamplingConfig s;
  s.num_samples = 3;
  const auto items = dimt::collect_batch(segs, kPrompt, s, endpoint);
  long long retries = 0;
  for (const auto& item : items) {
    ASSERT_TRUE(item.result);
    EXPECT_EQ(item.result->candidates.size(), 4u);
    retries += item.result->generation->retries;
  }
  EXPECT_GT(retries, 0);
  EXPECT_EQ(retries, failures.load());
  EXPECT_EQ(static_cast<long long>(mock.ledger().size()), 4 * (3 + 1) + retries);
}

TEST(GenClientBatch, PromptNeedsContent) {
  MockEndpoint mock;
  const dimt::PromptTemplate no_placeholder{"generate", "Translate the page.", true, false};
  const std::vector<Segment> segs = {text_segment("a", "x")};
  EXPECT_THROW(dimt::collect_batch(segs, no_placeholder, {}, endpoint_for(mock)), dimt::UsageError);
}

TEST(GenClientBatch, FileStreamingWritesResultsAndErrors) {
  test_support::TempDir dir;
  MockEndpoint mock([](const json& r, int call, httplib::Response& res) {
    if (MockEndpoint::prompt_of(r).find("BAD") != std::string::npos) {
      res.status = 500;
      return;
    }
    MockEndpoint::echo(r, call, res);
  });
  auto endpoint = endpoint_for(mock);
  endpoint.max_retries = 0;
  std::vector<Segment> segs;
  for (int i = 0; i < 7; ++i) segs.push_back(text_segment("s" + std::to_string(i), i == 5 ? "BAD" : "fine"));
  dimt::write_jsonl<Segment>(segs, dir.path() / "in.jsonl");
  dimt::SamplingConfig s;
  s.num_samples = 1;
  const auto summary = dimt::collect_file(dir.path() / "in.jsonl", dir.path() / "out.jsonl",
                                          dir.path() / "out.errors.jsonl", kPrompt, s, endpoint, {}, 3);
  EXPECT_EQ(summary.segments, 7u);
  EXPECT_EQ(summary.failed, 1u);
  const auto sets = dimt::read_jsonl<dimt::CandidateSet>(dir.path() / "out.jsonl");
  ASSERT_EQ(sets.size(), 6u);
  EXPECT_EQ(sets[5].segment_id, "s6");
  const auto errors = dimt::read_jsonl<dimt::SegmentError>(dir.path() / "out.errors.jsonl");
  ASSERT_EQ(errors.size(), 1u);
  EXPECT_EQ(errors[0].segment_id, "s5");
}
