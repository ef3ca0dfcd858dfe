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
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "dimt/bleu.hpp"
#include "dimt/core.hpp"
#include "dimt/dataset.hpp"
#include "dimt/error.hpp"
#include "dimt/evaluate.hpp"
#include "dimt/genclient.hpp"
#include "dimt/hash.hpp"
#include "dimt/jsonl.hpp"
#include "dimt/mbr.hpp"
#include "dimt/postprocess.hpp"

namespace dimt {

enum class Stage { Generate, Mbr, Postprocess, Score };

inline constexpr std::array<Stage, 4> kAllStages = {Stage::Generate, Stage::Mbr, Stage::Postprocess, Stage::Score};

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Generate: return "generate";
    case Stage::Mbr: return "mbr";
    case Stage::Postprocess: return "postprocess";
    case Stage::Score: return "score";
  }
  return "?";
}

inline Stage parse_stage(std::string_view s) {
  for (Stage stage : kAllStages) {
    if (to_string(stage) == s) return stage;
  }
  throw UsageError("unknown stage '" + std::string(s) + "' (expected generate, mbr, postprocess or score)");
}

// "mbr,postprocess,score"; stages must appear in pipeline order, once each.
inline std::vector<Stage> parse_stage_list(std::string_view list) {
  std::vector<Stage> out;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const auto comma = std::min(list.find(',', pos), list.size());
    const auto name = list.substr(pos, comma - pos);
    if (!name.empty()) {
      const Stage s = parse_stage(name);
      if (!out.empty() && static_cast<int>(s) <= static_cast<int>(out.back())) {
        throw UsageError("stages must be listed once each, in the order generate, mbr, postprocess, score");
      }
      out.push_back(s);
    }
    pos = comma + 1;
  }
  if (out.empty()) throw UsageError("no stages given");
  return out;
}

struct PipelinePaths {
  std::filesystem::path segments;
  std::filesystem::path candidates;
  std::filesystem::path mbr;
  std::filesystem::path postprocessed;
  std::filesystem::path hypotheses;  // scored file; defaults to postprocessed
  std::filesystem::path report;
  std::filesystem::path manifest;
};

struct ScoreSettings {
  TrackKind track = TrackKind::Track1WebDoc;
  Split split = Split::Valid;
  SubTask sub_task = SubTask::MT;
  std::string system = "system";
  bool allow_partial = false;
};

struct PipelineConfig {
  EndpointConfig endpoint;
  std::string auth_env = "DIMT_API_KEY";
  SamplingConfig sampling;
  std::string prompt = "Translate the following text into Chinese. Output only the translation.\n\n{source_text}";
  std::filesystem::path image_root;
  bool fail_fast = false;
  BleuConfig mbr_bleu;
  std::size_t mbr_threads = std::max(1u, std::thread::hardware_concurrency());
  PostprocessConfig postprocess;
  BleuConfig bleu = BleuConfig::corpus_default();
  ScoreSettings score;
  PipelinePaths paths;

  std::filesystem::path scored_file() const { return paths.hypotheses.empty() ? paths.postprocessed : paths.hypotheses; }
};

namespace detail {

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  if (path.empty() || path.is_absolute() || base.empty()) return path;
  return base / path;
}

template <typename F>
void for_keys(const json& j, const char* section, F&& f) {
  if (!j.is_object()) throw UsageError(std::string("config section '") + section + "' must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (!f(key, value)) throw UsageError(std::string("unknown key '") + key + "' in config section '" + section + "'");
    } catch (const json::exception& e) {
      throw UsageError(std::string("config ") + section + "." + key + ": " + e.what());
    }
  }
}

}  // namespace detail

// Relative paths are resolved against `base_dir`, normally the directory
// holding the config file.
inline PipelineConfig pipeline_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  PipelineConfig c;
  c.image_root = base_dir;
  detail::for_keys(j, "<root>", [&](const std::string& key, const json& v) {
    if (key == "endpoint") {
      detail::for_keys(v, "endpoint", [&](const std::string& k, const json& x) {
        if (k == "base_url") c.endpoint.base_url = x.get<std::string>();
        else if (k == "model_name") c.endpoint.model_name = x.get<std::string>();
        else if (k == "auth_env") c.auth_env = x.get<std::string>();
        else if (k == "timeout_s") c.endpoint.timeout = std::chrono::milliseconds(static_cast<long long>(x.get<double>() * 1000));
        else if (k == "max_retries") c.endpoint.max_retries = x.get<int>();
        else if (k == "max_concurrent_requests") c.endpoint.max_concurrent_requests = x.get<int>();
        else if (k == "backoff_base_ms") c.endpoint.backoff_base = std::chrono::milliseconds(x.get<long long>());
        else if (k == "backoff_cap_ms") c.endpoint.backoff_cap = std::chrono::milliseconds(x.get<long long>());
        else return false;
        return true;
      });
    } else if (key == "sampling") {
      detail::for_keys(v, "sampling", [&](const std::string& k, const json& x) {
        if (k == "temperature") c.sampling.temperature = x.get<double>();
        else if (k == "top_p") c.sampling.top_p = x.get<double>();
        else if (k == "num_samples") c.sampling.num_samples = x.get<int>();
        else if (k == "deterministic_pass") c.sampling.deterministic_pass = x.get<bool>();
        else if (k == "max_output_tokens") c.sampling.max_output_tokens = x.get<int>();
        else if (k == "seed") c.sampling.seed = x.get<std::uint64_t>();
        else if (k == "deterministic_params") c.sampling.deterministic_params = x;
        else return false;
        return true;
      });
    } else if (key == "generate") {
      detail::for_keys(v, "generate", [&](const std::string& k, const json& x) {
        if (k == "prompt") c.prompt = x.get<std::string>();
        else if (k == "image_root") c.image_root = detail::resolve(base_dir, x.get<std::string>());
        else if (k == "fail_fast") c.fail_fast = x.get<bool>();
        else return false;
        return true;
      });
    } else if (key == "mbr") {
      detail::for_keys(v, "mbr", [&](const std::string& k, const json& x) {
        if (k == "bleu") c.mbr_bleu = bleu_config_from_json(x, BleuConfig{});
        else if (k == "threads") c.mbr_threads = x.get<std::size_t>();
        else return false;
        return true;
      });
    } else if (key == "postprocess") {
      c.postprocess = postprocess_config_from_json(v);
      if (!c.postprocess.segmenter_lexicon.empty()) {
        c.postprocess.segmenter_lexicon = detail::resolve(base_dir, c.postprocess.segmenter_lexicon.string());
      }
    } else if (key == "bleu") {
      c.bleu = bleu_config_from_json(v);
    } else if (key == "score") {
      detail::for_keys(v, "score", [&](const std::string& k, const json& x) {
        if (k == "track") c.score.track = parse_track(x.is_number() ? std::to_string(x.get<int>()) : x.get<std::string>());
        else if (k == "split") c.score.split = parse_split(x.get<std::string>());
        else if (k == "sub_task") c.score.sub_task = parse_sub_task(x.get<std::string>());
        else if (k == "system") c.score.system = x.get<std::string>();
        else if (k == "allow_partial") c.score.allow_partial = x.get<bool>();
        else return false;
        return true;
      });
    } else if (key == "paths") {
      detail::for_keys(v, "paths", [&](const std::string& k, const json& x) {
        const auto p = detail::resolve(base_dir, x.get<std::string>());
        if (k == "segments") c.paths.segments = p;
        else if (k == "candidates") c.paths.candidates = p;
        else if (k == "mbr") c.paths.mbr = p;
        else if (k == "postprocessed") c.paths.postprocessed = p;
        else if (k == "hypotheses") c.paths.hypotheses = p;
        else if (k == "report") c.paths.report = p;
        else if (k == "manifest") c.paths.manifest = p;
        else return false;
        return true;
      });
    } else {
      return false;
    }
    return true;
  });
  return c;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open config");
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ParseError(path.string(), 0, "", "config is not valid JSON");
  return pipeline_config_from_json(j, std::filesystem::absolute(path).parent_path());
}

struct FileDigest {
  std::filesystem::path path;
  std::string sha256;
};

struct StageReport {
  Stage stage = Stage::Generate;
  std::vector<FileDigest> inputs;
  std::filesystem::path output;
  std::size_t records_in = 0;
  std::size_t records_out = 0;
  double wall_seconds = 0.0;
  json details = json::object();
};

namespace detail {

// Which stage writes each intermediate file, for missing-input messages.
inline void require_input(const std::filesystem::path& path, Stage consumer, std::string_view what,
                          std::optional<Stage> producer) {
  if (path.empty()) {
    throw UsageError("stage '" + std::string(to_string(consumer)) + "' needs a " + std::string(what) + " path");
  }
  if (std::filesystem::exists(path)) return;
  std::string msg = std::string(what) + " for stage '" + std::string(to_string(consumer)) + "' not found";
  if (producer) {
    msg += "; it is produced by stage '" + std::string(to_string(*producer)) + "' (run `dimt " +
           std::string(to_string(*producer)) + "` or include it in --stages)";
  }
  throw IoError(path.string(), msg);
}

inline void require_output(const std::filesystem::path& path, Stage stage, std::string_view what) {
  if (path.empty()) {
    throw UsageError("stage '" + std::string(to_string(stage)) + "' needs a " + std::string(what) + " path");
  }
}

inline FileDigest digest(const std::filesystem::path& p) { return {p, sha256_file(p)}; }

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

inline StageReport run_generate_stage(const PipelineConfig& c) {
  detail::Stopwatch clock;
  detail::require_input(c.paths.segments, Stage::Generate, "segment file", std::nullopt);
  detail::require_output(c.paths.candidates, Stage::Generate, "candidates");
  StageReport r{Stage::Generate, {detail::digest(c.paths.segments)}, c.paths.candidates};
  EndpointConfig endpoint = c.endpoint;
  if (endpoint.auth_token.empty()) endpoint.auth_token = token_from_env(c.auth_env);
  const PromptTemplate prompt("prompt", c.prompt, true, false);
  auto errors = c.paths.candidates;
  errors += ".errors.jsonl";
  std::filesystem::remove(errors);
  const CollectSummary s =
      collect_file(c.paths.segments, c.paths.candidates, errors, prompt, c.sampling, endpoint, {c.image_root, c.fail_fast});
  r.records_in = s.segments;
  r.records_out = s.succeeded;
  r.details = {{"failed", s.failed}, {"requests", s.requests}, {"retries", s.retries}};
  if (s.failed) r.details["errors_file"] = errors.string();
  r.wall_seconds = clock.seconds();
  return r;
}

inline StageReport run_mbr_stage(const PipelineConfig& c, bool keep_matrix = false) {
  detail::Stopwatch clock;
  detail::require_input(c.paths.candidates, Stage::Mbr, "candidate file", Stage::Generate);
  detail::require_output(c.paths.mbr, Stage::Mbr, "mbr output");
  StageReport r{Stage::Mbr, {detail::digest(c.paths.candidates)}, c.paths.mbr};
  const MbrOptions options{c.mbr_bleu, keep_matrix};
  JsonlReader<CandidateSet> reader(c.paths.candidates);
  JsonlWriter<MbrResult> writer(c.paths.mbr);
  std::vector<CandidateSet> chunk;
  std::size_t deterministic_selected = 0;
  const auto run_chunk = [&] {
    const auto results = mbr_batch(chunk, options, c.mbr_threads);
    for (std::size_t i = 0; i < results.size(); ++i) {
      if (chunk[i].candidates[results[i].selected_index].origin == Origin::Deterministic) ++deterministic_selected;
      writer.write(results[i]);
    }
    chunk.clear();
  };
  reader.for_each([&](Record<CandidateSet>&& rec) {
    ++r.records_in;
    chunk.push_back(std::move(rec.value));
    if (chunk.size() >= 256) run_chunk();
  });
  if (!chunk.empty()) run_chunk();
  writer.close();
  r.records_out = writer.count();
  r.details = {{"deterministic_selected", deterministic_selected}};
  r.wall_seconds = clock.seconds();
  return r;
}

inline StageReport run_postprocess_stage(const PipelineConfig& c) {
  detail::Stopwatch clock;
  detail::require_input(c.paths.mbr, Stage::Postprocess, "mbr output", Stage::Mbr);
  detail::require_output(c.paths.postprocessed, Stage::Postprocess, "postprocessed output");
  StageReport r{Stage::Postprocess, {detail::digest(c.paths.mbr)}, c.paths.postprocessed};
  const Postprocessor pp(c.postprocess);
  JsonlWriter<PostprocessedRecord> writer(c.paths.postprocessed);
  std::array<std::size_t, 3> fired{};
  JsonlReader<Hypothesis>(c.paths.mbr).for_each([&](Record<Hypothesis>&& rec) {
    ++r.records_in;
    PostprocessReport rep = pp.run(rec.value.text);
    for (Rule rule : rep.rules_fired) ++fired[static_cast<std::size_t>(rule)];
    writer.write({rec.value.segment_id, std::move(rep.output_text), std::move(rep.rules_fired), rep.runs_compressed});
  });
  writer.close();
  r.records_out = writer.count();
  for (Rule rule : {Rule::TableSuppressed, Rule::RunCompressed, Rule::SpacesCollapsed}) {
    r.details[std::string(to_string(rule))] = fired[static_cast<std::size_t>(rule)];
  }
  r.wall_seconds = clock.seconds();
  return r;
}

struct ScoreOutcome {
  StageReport stage;
  SubtaskScore score;
  EvalReport report;
};

// Scores the hypothesis file against the segment file and writes a one-cell
// report (JSON) to paths.report when set.
inline ScoreOutcome run_score_stage(const PipelineConfig& c) {
  detail::Stopwatch clock;
  const auto hyp = c.scored_file();
  detail::require_input(hyp, Stage::Score, "hypothesis file",
                        c.paths.hypotheses.empty() ? std::optional<Stage>(Stage::Postprocess) : std::nullopt);
  detail::require_input(c.paths.segments, Stage::Score, "reference segment file", std::nullopt);
  // Validate the cell before reading anything.
  column_index(c.score.track, c.score.split, c.score.sub_task);
  ScoreOutcome out;
  out.stage = StageReport{Stage::Score, {detail::digest(hyp), detail::digest(c.paths.segments)}, c.paths.report};
  ScoreOptions options{c.score.allow_partial, {}};
  if (!c.paths.report.empty()) {
    options.diagnostics_path = c.paths.report;
    options.diagnostics_path.replace_extension(".diagnostics.json");
  } else {
    options.diagnostics_path = hyp;
    options.diagnostics_path += ".diagnostics.json";
  }
  out.score = score_subtask(hyp, c.paths.segments, c.score.sub_task, c.bleu, options);
  out.report = make_report(c.bleu);
  out.report.set(c.score.system, c.score.track, c.score.split, c.score.sub_task, out.score.bleu_percent);
  if (!c.paths.report.empty()) {
    if (c.paths.report.has_parent_path()) std::filesystem::create_directories(c.paths.report.parent_path());
    std::ofstream f(c.paths.report, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(c.paths.report.string(), "cannot write report");
    f << render_report(out.report, ReportFormat::Json);
  }
  out.stage.records_in = out.score.pairs + out.score.missing_hypotheses.size();
  out.stage.records_out = out.score.pairs;
  out.stage.details = {{"bleu", round2(out.score.bleu_percent)},
                       {"pairs", out.score.pairs},
                       {"missing_hypotheses", out.score.missing_hypotheses.size()},
                       {"unknown_hypotheses", out.score.unknown_hypotheses.size()}};
  out.stage.wall_seconds = clock.seconds();
  return out;
}

inline json to_json(const StageReport& r) {
  json inputs = json::array();
  for (const FileDigest& d : r.inputs) inputs.push_back({{"path", d.path.string()}, {"sha256", d.sha256}});
  json j = {{"stage", to_string(r.stage)},
            {"inputs", std::move(inputs)},
            {"output", r.output.string()},
            {"records_in", r.records_in},
            {"records_out", r.records_out},
            {"wall_time_s", r.wall_seconds}};
  for (const auto& [k, v] : r.details.items()) j[k] = v;
  return j;
}

struct PipelineRun {
  std::vector<StageReport> stages;
  std::optional<EvalReport> report;
  std::filesystem::path manifest;
};

inline std::filesystem::path manifest_path(const PipelineConfig& c) {
  if (!c.paths.manifest.empty()) return c.paths.manifest;
  for (const auto& p : {c.paths.report, c.paths.postprocessed, c.paths.mbr, c.paths.candidates}) {
    if (!p.empty()) return p.parent_path() / "manifest.json";
  }
  return "manifest.json";
}

// Runs the stages in order and writes the run manifest, also when a stage
// fails (the manifest then records the error before it is rethrown).
inline PipelineRun run_pipeline_stages(const PipelineConfig& c, const std::vector<Stage>& stages,
                                       const std::function<void(const StageReport&)>& on_stage = {}) {
  PipelineRun run;
  run.manifest = manifest_path(c);
  json manifest = {{"tool", "dimt"},
                   {"version", kVersion},
                   {"config_fingerprint", config_fingerprint(c.bleu)},
                   {"mbr_config_fingerprint", config_fingerprint(c.mbr_bleu)},
                   {"started_at", detail::utc_timestamp()}};
  json stage_list = json::array();
  const auto write_manifest = [&](const std::optional<std::string>& error) {
    manifest["stages"] = stage_list;
    manifest["finished_at"] = detail::utc_timestamp();
    manifest["status"] = error ? "failed" : "ok";
    if (error) manifest["error"] = *error;
    if (run.manifest.has_parent_path()) std::filesystem::create_directories(run.manifest.parent_path());
    std::ofstream f(run.manifest, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(run.manifest.string(), "cannot write manifest");
    f << manifest.dump(2) << "\n";
  };
  for (Stage s : stages) {
    try {
      StageReport r;
      switch (s) {
        case Stage::Generate: r = run_generate_stage(c); break;
        case Stage::Mbr: r = run_mbr_stage(c); break;
        case Stage::Postprocess: r = run_postprocess_stage(c); break;
        case Stage::Score: {
          ScoreOutcome o = run_score_stage(c);
          run.report = std::move(o.report);
          r = std::move(o.stage);
          break;
        }
      }
      stage_list.push_back(to_json(r));
      if (on_stage) on_stage(r);
      run.stages.push_back(std::move(r));
    } catch (const std::exception& e) {
      const std::string msg = "stage '" + std::string(to_string(s)) + "': " + e.what();
      write_manifest(msg);
      throw;
    }
  }
  write_manifest(std::nullopt);
  return run;
}

}  // namespace dimt
