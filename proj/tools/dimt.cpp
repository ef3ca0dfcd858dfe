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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dimt/dataset.hpp"
#include "dimt/evaluate.hpp"
#include "dimt/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

// Exit statuses, one per failure class.
enum Exit {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kIo = 3,
  kData = 4,
  kAlignment = 5,
  kCollection = 6,
  kConfig = 7,
};

int exit_code(dimt::ErrorKind kind) {
  switch (kind) {
    case dimt::ErrorKind::Usage: return kUsage;
    case dimt::ErrorKind::Io: return kIo;
    case dimt::ErrorKind::Parse:
    case dimt::ErrorKind::Schema: return kData;
    case dimt::ErrorKind::Alignment: return kAlignment;
    case dimt::ErrorKind::Collection: return kCollection;
    case dimt::ErrorKind::Config: return kConfig;
  }
  return kFailure;
}

bool quiet = false;

void note(const std::string& msg) {
  if (!quiet) std::cerr << "dimt: " << msg << "\n";
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw dimt::IoError(p.string(), "cannot open");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw dimt::IoError(p.string(), "cannot open for writing");
  out << text;
}

void emit(const std::optional<std::string>& out, const std::string& text) {
  if (out) {
    write_text(*out, text);
  } else {
    std::cout << text;
  }
}

std::string stage_line(const dimt::StageReport& r) {
  char secs[32];
  std::snprintf(secs, sizeof secs, "%.2f", r.wall_seconds);
  return std::string(dimt::to_string(r.stage)) + ": " + std::to_string(r.records_in) + " in, " +
         std::to_string(r.records_out) + " out, " + secs + " s";
}

// Options shared by several subcommands. Every one of them overrides the
// matching config-file field when given.
struct Flags {
  std::optional<std::string> config;

  std::optional<std::string> base_url, model, api_key_env, prompt, prompt_file, image_root;
  std::optional<double> temperature, top_p, timeout;
  std::optional<int> samples, max_output_tokens, max_retries, concurrency;
  std::optional<std::uint64_t> seed;
  bool no_deterministic = false;
  bool fail_fast = false;

  std::optional<int> max_order;
  std::optional<std::string> smoothing, tokenization;
  std::optional<double> epsilon;
  std::optional<std::size_t> threads;
  bool keep_matrix = false;

  std::optional<std::string> postprocess_config, segmenter, lexicon;
  std::optional<int> max_run_length, table_pipe_threshold, table_row_threshold;
  std::vector<std::string> special_symbols;
  bool no_collapse_spaces = false;
  bool join_cjk_words = false;

  std::optional<std::string> track, split, subtask, system;
  bool allow_partial = false;
};

void add_config(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "Pipeline config file (JSON); flags override its fields")
      ->check(CLI::ExistingFile);
}

void add_bleu_flags(CLI::App* app, Flags& f) {
  app->add_option("--max-order", f.max_order, "Highest n-gram order (1-9)");
  app->add_option("--smoothing", f.smoothing, "none | floor")->check(CLI::IsMember({"none", "floor"}));
  app->add_option("--epsilon", f.epsilon, "Floor value for zero-match orders under floor smoothing");
  app->add_option("--tokenization", f.tokenization, "whitespace | cjk-char | mixed")
      ->check(CLI::IsMember({"whitespace", "cjk-char", "mixed"}));
}

void apply_bleu(const Flags& f, dimt::BleuConfig& b) {
  if (f.max_order) b.max_order = *f.max_order;
  if (f.smoothing) b.smoothing = dimt::parse_smoothing(*f.smoothing);
  if (f.epsilon) b.epsilon = *f.epsilon;
  if (f.tokenization) b.tokenization = dimt::parse_tokenization(*f.tokenization);
  b.validate();
}

dimt::PipelineConfig base_config(const Flags& f) {
  if (f.config) return dimt::load_pipeline_config(*f.config);
  dimt::PipelineConfig c;
  c.image_root = fs::current_path();
  return c;
}

void apply_generate(const Flags& f, dimt::PipelineConfig& c) {
  if (f.base_url) c.endpoint.base_url = *f.base_url;
  if (f.model) c.endpoint.model_name = *f.model;
  if (f.api_key_env) c.auth_env = *f.api_key_env;
  if (f.timeout) c.endpoint.timeout = std::chrono::milliseconds(static_cast<long long>(*f.timeout * 1000));
  if (f.max_retries) c.endpoint.max_retries = *f.max_retries;
  if (f.concurrency) c.endpoint.max_concurrent_requests = *f.concurrency;
  if (f.temperature) c.sampling.temperature = *f.temperature;
  if (f.top_p) c.sampling.top_p = *f.top_p;
  if (f.samples) c.sampling.num_samples = *f.samples;
  if (f.max_output_tokens) c.sampling.max_output_tokens = *f.max_output_tokens;
  if (f.seed) c.sampling.seed = *f.seed;
  if (f.no_deterministic) c.sampling.deterministic_pass = false;
  if (f.prompt) c.prompt = *f.prompt;
  if (f.prompt_file) c.prompt = read_text(*f.prompt_file);
  if (f.image_root) c.image_root = *f.image_root;
  if (f.fail_fast) c.fail_fast = true;
}

void apply_postprocess(const Flags& f, dimt::PipelineConfig& c) {
  if (f.postprocess_config) {
    const auto j = dimt::json::parse(read_text(*f.postprocess_config), nullptr, false);
    if (j.is_discarded()) throw dimt::ParseError(*f.postprocess_config, 0, "", "postprocess config is not valid JSON");
    c.postprocess = dimt::postprocess_config_from_json(j, c.postprocess);
  }
  if (f.max_run_length) c.postprocess.max_run_length = *f.max_run_length;
  if (f.table_pipe_threshold) c.postprocess.table_pipe_threshold = *f.table_pipe_threshold;
  if (f.table_row_threshold) c.postprocess.table_row_threshold = *f.table_row_threshold;
  if (!f.special_symbols.empty()) c.postprocess.special_symbols = {f.special_symbols.begin(), f.special_symbols.end()};
  if (f.no_collapse_spaces) c.postprocess.collapse_spaces = false;
  if (f.join_cjk_words) c.postprocess.join_cjk_words = true;
  if (f.segmenter) c.postprocess.segmenter = *f.segmenter;
  if (f.lexicon) c.postprocess.segmenter_lexicon = *f.lexicon;
  c.postprocess.validate();
}

void apply_score(const Flags& f, dimt::PipelineConfig& c) {
  if (f.track) c.score.track = dimt::parse_track(*f.track);
  if (f.split) c.score.split = dimt::parse_split(*f.split);
  if (f.subtask) c.score.sub_task = dimt::parse_sub_task(*f.subtask);
  if (f.system) c.score.system = *f.system;
  if (f.allow_partial) c.score.allow_partial = true;
  apply_bleu(f, c.bleu);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Document-translation tooling: candidate generation, MBR selection, post-processing, "
               "scoring and training-data assembly.",
               "dimt"};
  app.set_version_flag("--version", std::string(dimt::kVersion));
  app.require_subcommand(1);
  app.add_flag("-q,--quiet", quiet, "Suppress progress messages on stderr");

  Flags f;
  std::optional<std::string> input, out, report_merge, diagnostics, format_name, mixture, stats_out, stages,
      manifest, report_path, ref;
  std::vector<std::string> inputs;
  std::string format = "md";
  std::optional<std::uint64_t> data_seed;

  const auto version = [](CLI::App* sub) { sub->set_version_flag("--version", std::string(dimt::kVersion)); };

  // generate
  auto* gen = app.add_subcommand("generate", "Collect a deterministic output plus sampled outputs per segment");
  version(gen);
  add_config(gen, f);
  gen->add_option("--input", input, "Segment JSONL");
  gen->add_option("--out", out, "Candidate-set JSONL; failures go to <out>.errors.jsonl");
  gen->add_option("--base-url", f.base_url, "Chat-completion endpoint base URL, e.g. http://host:8000/v1");
  gen->add_option("--model", f.model, "Model name sent with every request");
  gen->add_option("--api-key-env", f.api_key_env, "Environment variable holding the bearer token (default DIMT_API_KEY)");
  gen->add_option("--prompt", f.prompt, "Prompt template; {source_text} is replaced by the segment text");
  gen->add_option("--prompt-file", f.prompt_file, "Read the prompt template from a file")->check(CLI::ExistingFile);
  gen->add_option("--image-root", f.image_root, "Directory that relative image_ref paths resolve against");
  gen->add_option("--temperature", f.temperature, "Sampling temperature (default 0.7)");
  gen->add_option("--top-p", f.top_p, "Nucleus sampling mass (default 0.95)");
  gen->add_option("--samples", f.samples, "Sampled outputs per segment (default 10)");
  gen->add_flag("--no-deterministic", f.no_deterministic, "Skip the deterministic request");
  gen->add_option("--max-output-tokens", f.max_output_tokens, "max_tokens per request (default 8192)");
  gen->add_option("--seed", f.seed, "Seed base; sampled request i sends seed + i");
  gen->add_option("--max-retries", f.max_retries, "Retries per request (default 3)");
  gen->add_option("--concurrency", f.concurrency, "Requests in flight at most (default 8)");
  gen->add_option("--timeout", f.timeout, "Per-request timeout in seconds (default 120)");
  gen->add_flag("--fail-fast", f.fail_fast, "Abort on the first failed segment");

  // mbr
  auto* mbr = app.add_subcommand("mbr", "Select one candidate per segment by expected BLEU against the others");
  version(mbr);
  add_config(mbr, f);
  mbr->add_option("--input", input, "Candidate-set JSONL");
  mbr->add_option("--out", out, "Selection JSONL");
  add_bleu_flags(mbr, f);
  mbr->add_option("--threads", f.threads, "Worker threads (default: hardware concurrency)");
  mbr->add_flag("--keep-matrix", f.keep_matrix, "Include the pairwise utility matrix in the output");

  // postprocess
  auto* post = app.add_subcommand("postprocess", "Suppress complex tables, compress symbol runs, collapse spaces");
  version(post);
  add_config(post, f);
  post->add_option("--input", input, "JSONL with segment_id and text (or selected_text)");
  post->add_option("--out", out, "Post-processed JSONL");
  post->add_option("--postprocess-config", f.postprocess_config, "Key-value JSON file with post-processing settings")
      ->check(CLI::ExistingFile);
  post->add_option("--max-run-length", f.max_run_length, "Longest allowed run of one special symbol (default 10)");
  post->add_option("--special-symbols", f.special_symbols, "Symbols subject to run compression (default - … _ * = ~ .)")
      ->delimiter(',');
  post->add_option("--table-pipe-threshold", f.table_pipe_threshold, "Pipe count that marks a complex table (default 50)");
  post->add_option("--table-row-threshold", f.table_row_threshold,
                   "Number of lines with 2+ pipes that marks a complex table (default 20)");
  post->add_flag("--no-collapse-spaces", f.no_collapse_spaces, "Leave runs of spaces alone");
  post->add_flag("--join-cjk-words", f.join_cjk_words, "Also drop single spaces inside CJK words");
  post->add_option("--segmenter", f.segmenter, "greedy-lexicon | char")->check(CLI::IsMember({"greedy-lexicon", "char"}));
  post->add_option("--lexicon", f.lexicon, "Word list for the greedy-lexicon segmenter")->check(CLI::ExistingFile);

  // score
  auto* score = app.add_subcommand("score", "Corpus BLEU of one sub-track, joined to references by segment id");
  version(score);
  add_config(score, f);
  score->add_option("--track", f.track, "1 | 2")->check(CLI::IsMember({"1", "2", "track1", "track2"}));
  score->add_option("--split", f.split, "valid | test")->check(CLI::IsMember({"valid", "test"}));
  score->add_option("--subtask", f.subtask, "ocr | mt")->check(CLI::IsMember({"ocr", "mt"}));
  score->add_option("--hyp", input, "Hypothesis JSONL (segment_id + text or selected_text)");
  score->add_option("--ref", ref, "Reference segment JSONL");
  score->add_option("--system", f.system, "Row label in the report (default: system)");
  score->add_flag("--allow-partial", f.allow_partial, "Score the id intersection instead of failing on mismatches");
  score->add_option("--report", report_path, "Write the one-cell report as JSON here");
  score->add_option("--merge-into", report_merge, "Add the cell to this JSON report (created if missing)");
  score->add_option("--format", format, "Rendering on stdout or --out: md | csv | json")
      ->check(CLI::IsMember({"md", "markdown", "csv", "json"}));
  score->add_option("--out", out, "Write the rendered report here instead of stdout");
  add_bleu_flags(score, f);

  // build-data
  auto* build = app.add_subcommand("build-data", "Assemble fine-tuning conversations from segments");
  version(build);
  std::string track_name, split_name;
  build->add_option("--input", input, "Segment JSONL")->required();
  build->add_option("--out", out, "Training-example JSONL")->required();
  build->add_option("--track", track_name, "1 | 2")->required()->check(CLI::IsMember({"1", "2", "track1", "track2"}));
  build->add_option("--split", split_name, "train | valid | test")
      ->required()
      ->check(CLI::IsMember({"train", "valid", "test"}));
  build->add_option("--mixture", mixture, "Mixture spec JSON (weights, seed, prompt_templates)")
      ->check(CLI::ExistingFile);
  build->add_option("--seed", data_seed, "Overrides the mixture spec seed");
  build->add_option("--stats", stats_out, "Write dataset statistics JSON here");

  // stats
  auto* stats = app.add_subcommand("stats", "Count training examples per track, split and task");
  version(stats);
  stats->add_option("--input", inputs, "Training-example JSONL files")->required()->check(CLI::ExistingFile);
  stats->add_option("--out", out, "Write the statistics JSON here instead of stdout");

  // render-report
  auto* render = app.add_subcommand("render-report", "Render a JSON report as Markdown, CSV or JSON");
  version(render);
  render->add_option("--report", report_path, "JSON report")->required()->check(CLI::ExistingFile);
  render->add_option("--format", format, "md | csv | json")->check(CLI::IsMember({"md", "markdown", "csv", "json"}));
  render->add_option("--out", out, "Write here instead of stdout");

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "Run generate, mbr, postprocess and score from one config file");
  version(pipe);
  pipe->add_option("--config", f.config, "Pipeline config file (JSON)")->required()->check(CLI::ExistingFile);
  pipe->add_option("--stages", stages, "Comma-separated subset, in order (default: generate,mbr,postprocess,score)");
  pipe->add_option("--manifest", manifest, "Run manifest path (default: beside the outputs)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) {
      auto c = base_config(f);
      apply_generate(f, c);
      if (input) c.paths.segments = *input;
      if (out) c.paths.candidates = *out;
      const auto r = dimt::run_generate_stage(c);
      note(stage_line(r) + ", " + r.details.at("requests").dump() + " requests, " + r.details.at("retries").dump() +
           " retries");
      if (r.details.at("failed").get<std::size_t>() > 0) {
        note(r.details.at("failed").dump() + " segment(s) failed; see " + r.details.at("errors_file").get<std::string>());
        return kCollection;
      }
    } else if (mbr->parsed()) {
      auto c = base_config(f);
      apply_bleu(f, c.mbr_bleu);
      if (f.threads) c.mbr_threads = *f.threads;
      if (input) c.paths.candidates = *input;
      if (out) c.paths.mbr = *out;
      note(stage_line(dimt::run_mbr_stage(c, f.keep_matrix)));
    } else if (post->parsed()) {
      auto c = base_config(f);
      apply_postprocess(f, c);
      if (input) c.paths.mbr = *input;
      if (out) c.paths.postprocessed = *out;
      note(stage_line(dimt::run_postprocess_stage(c)));
    } else if (score->parsed()) {
      auto c = base_config(f);
      apply_score(f, c);
      if (input) c.paths.hypotheses = *input;
      if (ref) c.paths.segments = *ref;
      if (report_path) c.paths.report = *report_path;
      auto outcome = dimt::run_score_stage(c);
      note(stage_line(outcome.stage));
      dimt::EvalReport shown = outcome.report;
      if (report_merge) {
        if (fs::exists(*report_merge)) {
          shown = dimt::load_report(*report_merge);
          if (shown.config_fingerprint != outcome.report.config_fingerprint) {
            throw dimt::UsageError("report " + *report_merge + " was scored with a different BLEU config (" +
                                   shown.config_fingerprint + ")");
          }
        }
        shown.set(c.score.system, c.score.track, c.score.split, c.score.sub_task, outcome.score.bleu_percent);
        write_text(*report_merge, dimt::render_report(shown, dimt::ReportFormat::Json));
      }
      emit(out, dimt::render_report(shown, dimt::parse_report_format(format)));
    } else if (build->parsed()) {
      dimt::MixtureSpec spec = mixture ? dimt::load_mixture_spec(*mixture) : dimt::MixtureSpec{};
      if (data_seed) spec.seed = *data_seed;
      const auto track = dimt::parse_track(track_name);
      const auto split = dimt::parse_split(split_name);
      const auto summary = dimt::build_mixture_file(
          *input, *out, spec, track, split, [](const dimt::Segment& s, std::size_t line) {
            note("warning: skipped segment '" + s.id + "' (line " + std::to_string(line) +
                 "): no weighted task fits its fields");
          });
      note("build-data: " + summary.to_json().dump());
      if (stats_out) write_text(*stats_out, dimt::dataset_stats_file(*out).to_json().dump(2) + "\n");
    } else if (stats->parsed()) {
      dimt::DatasetStats total;
      for (const auto& path : inputs) {
        dimt::JsonlReader<dimt::TrainingExample>(path).for_each(
            [&](dimt::Record<dimt::TrainingExample>&& r) { total.add(r.value); });
      }
      emit(out, total.to_json().dump(2) + "\n");
    } else if (render->parsed()) {
      emit(out, dimt::render_report(dimt::load_report(*report_path), dimt::parse_report_format(format)));
    } else if (pipe->parsed()) {
      auto c = dimt::load_pipeline_config(*f.config);
      if (manifest) c.paths.manifest = *manifest;
      const auto list = dimt::parse_stage_list(stages.value_or("generate,mbr,postprocess,score"));
      const auto run = dimt::run_pipeline_stages(c, list, [](const dimt::StageReport& r) { note(stage_line(r)); });
      if (run.report) std::cout << dimt::render_report(*run.report, dimt::ReportFormat::Markdown);
      note("manifest: " + run.manifest.string());
    }
  } catch (const dimt::Error& e) {
    std::cerr << "dimt: error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "dimt: error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}
