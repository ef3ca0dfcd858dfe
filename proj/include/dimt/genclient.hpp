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
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <httplib.h>

#include "dimt/core.hpp"
#include "dimt/dataset.hpp"
#include "dimt/error.hpp"
#include "dimt/hash.hpp"
#include "dimt/jsonl.hpp"
#include "dimt/mbr.hpp"

namespace dimt {

struct SamplingConfig {
  double temperature = 0.7;
  double top_p = 0.95;
  int num_samples = 10;
  bool deterministic_pass = true;
  int max_output_tokens = 8192;
  // Sampled request i carries seed + i, for backends that honour it.
  std::uint64_t seed = 0;
  // Extra fields for the deterministic request. Sampling fields are never sent
  // with it; backends that default to sampling need greedy selected here.
  json deterministic_params = {{"top_k", 1}};

  void validate() const {
    if (!(temperature > 0.0 && temperature <= 2.0)) throw UsageError("temperature must be in (0, 2]");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw UsageError("top_p must be in (0, 1]");
    if (num_samples < 0) throw UsageError("num_samples must be >= 0");
    if (requests_per_segment() < 1) throw UsageError("need at least one sample or the deterministic pass");
    if (max_output_tokens < 1) throw UsageError("max_output_tokens must be >= 1");
    if (!deterministic_params.is_object()) throw UsageError("deterministic_params must be a JSON object");
    for (const char* key : {"temperature", "top_p"}) {
      if (deterministic_params.contains(key)) {
        throw UsageError(std::string("deterministic_params must not set ") + key);
      }
    }
  }

  int requests_per_segment() const { return num_samples + (deterministic_pass ? 1 : 0); }
};

struct EndpointConfig {
  std::string base_url;
  std::string model_name;
  std::string auth_token;
  std::chrono::milliseconds timeout{120'000};
  int max_retries = 3;
  int max_concurrent_requests = 8;
  std::chrono::milliseconds backoff_base{1'000};
  std::chrono::milliseconds backoff_cap{30'000};

  void validate() const;
};

inline std::string token_from_env(const std::string& var = "DIMT_API_KEY") {
  const char* v = std::getenv(var.c_str());
  return v ? std::string(v) : std::string();
}

struct BaseUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // prefix without trailing slash, e.g. "/v1"
};

inline BaseUrl parse_base_url(std::string_view url) {
  const auto bad = [&](const std::string& why) {
    return UsageError("invalid base_url '" + std::string(url) + "': " + why);
  };
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) throw bad("missing scheme");
  const std::string_view scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw bad("scheme must be http or https");
  const std::string_view rest = url.substr(scheme_end + 3);
  const auto slash = rest.find('/');
  const std::string_view authority = rest.substr(0, slash);
  if (authority.empty()) throw bad("missing host");
  if (authority.find_first_of(" @?#") != std::string_view::npos) throw bad("unsupported characters in host");
  const auto colon = authority.rfind(':');
  if (colon != std::string_view::npos && authority.find(']') == std::string_view::npos) {
    const std::string_view port = authority.substr(colon + 1);
    if (port.empty() || colon == 0 || port.find_first_not_of("0123456789") != std::string_view::npos ||
        port.size() > 5 || std::stoi(std::string(port)) > 65535) {
      throw bad("bad port");
    }
  }
  BaseUrl out{std::string(url.substr(0, scheme_end + 3 + authority.size())), ""};
  if (slash != std::string_view::npos) out.path = std::string(rest.substr(slash));
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  return out;
}

inline void EndpointConfig::validate() const {
  parse_base_url(base_url);
  if (model_name.empty()) throw UsageError("model_name must be non-empty");
  if (max_retries < 0) throw UsageError("max_retries must be >= 0");
  if (max_concurrent_requests < 1) throw UsageError("max_concurrent_requests must be >= 1");
  if (timeout.count() <= 0) throw UsageError("timeout must be positive");
  if (backoff_base.count() < 0 || backoff_cap < backoff_base) throw UsageError("invalid backoff settings");
}

enum class RequestKind { Deterministic, Sampled };

inline std::string_view to_string(RequestKind k) { return k == RequestKind::Deterministic ? "deterministic" : "sampled"; }

inline std::string_view image_mime_type(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".webp") return "image/webp";
  if (ext == ".gif") return "image/gif";
  if (ext == ".bmp") return "image/bmp";
  if (ext == ".tif" || ext == ".tiff") return "image/tiff";
  return "application/octet-stream";
}

// Remote and data URIs pass through; local files are inlined as base64 data
// URIs, resolved against `root` when relative.
inline std::string image_url(const std::string& ref, const std::filesystem::path& root = {}) {
  for (std::string_view prefix : {"http://", "https://", "data:"}) {
    if (ref.rfind(prefix, 0) == 0) return ref;
  }
  std::filesystem::path p(ref);
  if (p.is_relative() && !root.empty()) p = root / p;
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError(p.string(), "cannot open image");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return "data:" + std::string(image_mime_type(p)) + ";base64," + base64_encode(bytes);
}

// One chat-completion request body. With an image the user message is a
// content list holding the image then the prompt text.
inline json build_request(const std::string& prompt, const std::optional<std::string>& image,
                          const SamplingConfig& sampling, const EndpointConfig& endpoint, RequestKind kind,
                          int sample_index = 0) {
  json content;
  if (image) {
    content = json::array({{{"type", "image_url"}, {"image_url", {{"url", *image}}}},
                           {{"type", "text"}, {"text", prompt}}});
  } else {
    content = prompt;
  }
  json body = {{"model", endpoint.model_name},
               {"messages", json::array({{{"role", "user"}, {"content", std::move(content)}}})},
               {"n", 1},
               {"max_tokens", sampling.max_output_tokens}};
  if (kind == RequestKind::Sampled) {
    body["temperature"] = sampling.temperature;
    body["top_p"] = sampling.top_p;
    body["seed"] = sampling.seed + static_cast<std::uint64_t>(sample_index);
  } else {
    for (const auto& [key, value] : sampling.deterministic_params.items()) body[key] = value;
  }
  return body;
}

// choices[0].message.content, verbatim.
inline std::optional<std::string> completion_text(const std::string& body) {
  const json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  const auto choices = j.find("choices");
  if (choices == j.end() || !choices->is_array() || choices->empty()) return std::nullopt;
  const json& first = (*choices)[0];
  if (!first.is_object() || !first.contains("message") || !first["message"].is_object()) return std::nullopt;
  const json& message = first["message"];
  const auto content = message.find("content");
  if (content == message.end() || !content->is_string()) return std::nullopt;
  return content->get<std::string>();
}

struct Completion {
  std::string text;
  int attempts = 0;
};

// Posts chat-completion requests with retries. Not safe for concurrent use;
// give every worker thread its own client.
class ChatClient {
 public:
  explicit ChatClient(EndpointConfig endpoint)
      : endpoint_(std::move(endpoint)),
        url_(parse_base_url(endpoint_.base_url)),
        client_(url_.origin),
        jitter_(std::random_device{}()) {
    client_.set_connection_timeout(endpoint_.timeout);
    client_.set_read_timeout(endpoint_.timeout);
    client_.set_write_timeout(endpoint_.timeout);
    if (!endpoint_.auth_token.empty()) client_.set_bearer_token_auth(endpoint_.auth_token);
  }

  // Retries 5xx, 408, 429, transport failures and unparseable replies with
  // exponential backoff; any other non-2xx status is a ConfigError.
  Completion complete(const json& body, const std::string& what) {
    const std::string payload = body.dump();
    const std::string path = url_.path + "/chat/completions";
    std::string last_error;
    for (int attempt = 0; attempt <= endpoint_.max_retries; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(backoff(attempt));
      const auto res = client_.Post(path, payload, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      const int status = res->status;
      if (status >= 200 && status < 300) {
        if (auto text = completion_text(res->body)) return {std::move(*text), attempt + 1};
        last_error = "malformed response body";
        continue;
      }
      if (status >= 500 || status == 429 || status == 408) {
        last_error = "HTTP " + std::to_string(status);
        continue;
      }
      throw ConfigError(what + ": endpoint rejected the request with HTTP " + std::to_string(status) + ": " +
                        res->body.substr(0, 300));
    }
    throw CollectionError(what + " failed after " + std::to_string(endpoint_.max_retries + 1) +
                          " attempts: " + last_error);
  }

 private:
  std::chrono::milliseconds backoff(int attempt) {
    const auto base = endpoint_.backoff_base.count();
    const auto cap = endpoint_.backoff_cap.count();
    long long d = base;
    for (int i = 1; i < attempt && d < cap; ++i) d *= 2;
    d = std::min<long long>(d, cap);
    std::uniform_int_distribution<long long> half(0, d / 2);
    return std::chrono::milliseconds(d - d / 2 + half(jitter_));
  }

  EndpointConfig endpoint_;
  BaseUrl url_;
  httplib::Client client_;
  std::mt19937_64 jitter_;
};

struct SegmentError {
  std::string segment_id;
  std::string request_kind;  // "deterministic", "sampled" or "" for segment-level failures
  std::optional<int> sample_index;
  std::string message;
};

template <>
struct JsonlSchema<SegmentError> {
  static SegmentError from_json(const json& j) {
    SegmentError e{field::identifier(j, "segment_id"), field::identifier(j, "request_kind"), std::nullopt,
                   field::identifier(j, "error")};
    if (j.contains("sample_index") && !j["sample_index"].is_null()) {
      e.sample_index = static_cast<int>(field::integer(j, "sample_index"));
    }
    return e;
  }
  static json to_json(const SegmentError& e) {
    json j = {{"segment_id", e.segment_id}, {"request_kind", e.request_kind}};
    if (e.sample_index) j["sample_index"] = *e.sample_index;
    j["error"] = e.message;
    return j;
  }
};

struct BatchItem {
  std::string segment_id;
  std::optional<CandidateSet> result;
  std::optional<SegmentError> error;
};

struct BatchOptions {
  std::filesystem::path image_root;
  bool fail_fast = false;
};

namespace detail {

inline std::vector<BatchItem> collect(std::span<const Segment> segments, std::span<const std::string> prompts,
                                     const SamplingConfig& sampling, const EndpointConfig& endpoint,
                                     const BatchOptions& options) {
  sampling.validate();
  endpoint.validate();

  struct Job {
    std::size_t segment;
    RequestKind kind;
    int sample_index;
  };
  struct Prepared {
    std::optional<std::string> image;
    std::exception_ptr error;
  };

  std::vector<Prepared> prepared(segments.size());
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const Segment& seg = segments[s];
    try {
      if (seg.has_image()) prepared[s].image = image_url(*seg.image_ref, options.image_root);
    } catch (const Error&) {
      if (options.fail_fast) throw;
      prepared[s].error = std::current_exception();
      continue;
    }
    if (sampling.deterministic_pass) jobs.push_back({s, RequestKind::Deterministic, 0});
    for (int i = 0; i < sampling.num_samples; ++i) jobs.push_back({s, RequestKind::Sampled, i});
  }

  struct Outcome {
    std::optional<Completion> completion;
    std::exception_ptr error;
    bool config_error = false;
  };
  std::vector<Outcome> outcomes(jobs.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  const auto worker = [&] {
    ChatClient client(endpoint);
    for (std::size_t i = next++; i < jobs.size() && !stop; i = next++) {
      const Job& job = jobs[i];
      const Segment& seg = segments[job.segment];
      std::string what = "segment '" + seg.id + "': " + std::string(to_string(job.kind)) + " request";
      if (job.kind == RequestKind::Sampled) what += " " + std::to_string(job.sample_index);
      try {
        const json body =
            build_request(prompts[job.segment], prepared[job.segment].image, sampling, endpoint, job.kind,
                          job.sample_index);
        outcomes[i].completion = client.complete(body, what);
      } catch (const ConfigError&) {
        outcomes[i].error = std::current_exception();
        outcomes[i].config_error = true;
        stop = true;
      } catch (...) {
        outcomes[i].error = std::current_exception();
        if (options.fail_fast) stop = true;
      }
    }
  };
  {
    const std::size_t n_workers =
        std::min(jobs.size(), static_cast<std::size_t>(endpoint.max_concurrent_requests));
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }

  for (const Outcome& o : outcomes) {
    if (o.config_error) std::rethrow_exception(o.error);
  }
  if (options.fail_fast) {
    for (const Outcome& o : outcomes) {
      if (o.error) std::rethrow_exception(o.error);
    }
  }

  std::vector<BatchItem> items(segments.size());
  for (std::size_t s = 0; s < segments.size(); ++s) {
    items[s].segment_id = segments[s].id;
    if (prepared[s].error) {
      try {
        std::rethrow_exception(prepared[s].error);
      } catch (const std::exception& e) {
        items[s].error = SegmentError{segments[s].id, "", std::nullopt, e.what()};
      }
    } else {
      items[s].result = CandidateSet{segments[s].id, {},
                                     GenerationInfo{endpoint.model_name, sampling.temperature, sampling.top_p,
                                                    sampling.num_samples, sampling.deterministic_pass, 0, 0}};
    }
  }
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const Job& job = jobs[i];
    BatchItem& item = items[job.segment];
    if (item.error) continue;
    const Outcome& o = outcomes[i];
    if (o.error) {
      try {
        std::rethrow_exception(o.error);
      } catch (const std::exception& e) {
        item.error = SegmentError{item.segment_id, std::string(to_string(job.kind)),
                                  job.kind == RequestKind::Sampled ? std::optional<int>(job.sample_index)
                                                                   : std::nullopt,
                                  e.what()};
      }
      item.result.reset();
      continue;
    }
    GenerationInfo& gen = *item.result->generation;
    gen.requests += o.completion->attempts;
    gen.retries += o.completion->attempts - 1;
    if (job.kind == RequestKind::Deterministic) {
      item.result->candidates.push_back({o.completion->text, Origin::Deterministic, std::nullopt});
    } else {
      item.result->candidates.push_back({o.completion->text, Origin::Sampled, job.sample_index});
    }
  }
  return items;
}

}  // namespace detail

// Collects candidate sets for a batch of segments. Requests from all segments
// share a pool of at most max_concurrent_requests workers; results come back
// in input order. A segment whose request exhausts its retries yields an
// error item, or aborts the batch under fail_fast. An HTTP 4xx always aborts.
inline std::vector<BatchItem> collect_batch(std::span<const Segment> segments, const PromptTemplate& prompt,
                                            const SamplingConfig& sampling, const EndpointConfig& endpoint,
                                            const BatchOptions& options = {}) {
  std::vector<std::string> prompts;
  prompts.reserve(segments.size());
  for (const Segment& seg : segments) {
    if (!prompt.has_placeholder() && !seg.has_image()) {
      throw UsageError("segment '" + seg.id + "' has no image_ref and the prompt has no {source_text} placeholder");
    }
    prompts.push_back(prompt.render(seg));
  }
  return detail::collect(segments, prompts, sampling, endpoint, options);
}

// The candidate set for one segment: the deterministic output first, then the
// samples in sample_index order. Throws on any failed request.
inline CandidateSet collect_candidates(const Segment& segment, const std::string& prompt,
                                       const SamplingConfig& sampling, const EndpointConfig& endpoint,
                                       const std::filesystem::path& image_root = {}) {
  if (prompt.empty()) throw UsageError("prompt must be non-empty");
  const Segment one[] = {segment};
  const std::string prompts[] = {prompt};
  auto items = detail::collect(one, prompts, sampling, endpoint, {image_root, true});
  return std::move(*items.front().result);
}

struct CollectSummary {
  std::size_t segments = 0;
  std::size_t succeeded = 0;
  std::size_t failed = 0;
  long long requests = 0;
  long long retries = 0;
};

// Streams a segment file through collect_batch in chunks, writing candidate
// sets to `out` and failures to `errors_out` in input order.
inline CollectSummary collect_file(const std::filesystem::path& in, const std::filesystem::path& out,
                                   const std::filesystem::path& errors_out, const PromptTemplate& prompt,
                                   const SamplingConfig& sampling, const EndpointConfig& endpoint,
                                   const BatchOptions& options = {}, std::size_t chunk = 64) {
  JsonlReader<Segment> reader(in);
  JsonlWriter<CandidateSet> writer(out);
  std::optional<JsonlWriter<SegmentError>> errors;
  CollectSummary summary;
  std::vector<Segment> pending;
  const auto flush = [&] {
    for (BatchItem& item : collect_batch(pending, prompt, sampling, endpoint, options)) {
      ++summary.segments;
      if (item.result) {
        ++summary.succeeded;
        summary.requests += item.result->generation->requests;
        summary.retries += item.result->generation->retries;
        writer.write(*item.result);
      } else {
        ++summary.failed;
        if (!errors) errors.emplace(errors_out);
        errors->write(*item.error);
      }
    }
    pending.clear();
  };
  reader.for_each([&](Record<Segment>&& r) {
    pending.push_back(std::move(r.value));
    if (pending.size() >= chunk) flush();
  });
  if (!pending.empty()) flush();
  writer.close();
  if (errors) errors->close();
  return summary;
}

}  // namespace dimt
