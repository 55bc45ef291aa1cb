// Copyright 2026 The QFTS Authors.
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
//
// qfts: query-focused table summarization pipeline.
//
// Subcommands: decompose, run, score, annotate, agreement, report. Exit
// codes: 0 success, 1 run completed with recorded per-example failures,
// 2 configuration or input error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qfts/annotate.hpp"
#include "qfts/config.hpp"
#include "qfts/decompose.hpp"
#include "qfts/harness.hpp"
#include "qfts/http_client.hpp"
#include "qfts/metrics.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPartial = 1;
constexpr int kExitConfig = 2;

struct CommonFlags {
  std::optional<std::filesystem::path> config_file;
  bool offline = false;
};

qfts::AppConfig resolve_config(const CommonFlags& flags) {
  qfts::AppConfig cfg = qfts::AppConfig::load(flags.config_file);
  if (flags.offline) {
    cfg.run.decomposer.offline = true;
    cfg.run.summarizer.offline = true;
  }
  return cfg;
}

int cmd_run(qfts::AppConfig cfg) {
  const qfts::RunReport report = qfts::run(cfg.run);
  qfts::emit_report(report, cfg.run.out_dir, qfts::ReportFormat::machine_records);
  qfts::emit_report(report, cfg.run.out_dir, qfts::ReportFormat::human_table);
  std::cout << qfts::render_human_table(report);
  std::cout << "run directory: " << cfg.run.out_dir << "\n";
  std::size_t failures = 0;
  for (const auto& m : report.modes) failures += m.failures.size();
  if (failures > 0) {
    for (const auto& m : report.modes)
      for (const auto& f : m.failures)
        std::cerr << "failed [" << qfts::to_string(m.mode) << "] " << f.example_id << ": "
                  << f.error << "\n";
    return kExitPartial;
  }
  return kExitOk;
}

int cmd_decompose(qfts::AppConfig cfg) {
  if (!cfg.run.decomposer.configured())
    throw qfts::ConfigError("decompose: no decomposer endpoint configured");
  const qfts::LoadResult loaded =
      qfts::load_dataset(cfg.run.dataset_path, cfg.run.schema_mode, cfg.run.field_map);
  const qfts::DatasetSplit split =
      qfts::sample_split(loaded.examples, cfg.run.sample_size, cfg.run.seed, "decompose");
  qfts::HttpLlmClient client(cfg.run.decomposer);

  const std::size_t n = split.examples.size();
  std::vector<std::optional<qfts::DecompositionResult>> results(n);
  std::vector<std::optional<std::string>> errors(n);
  qfts::detail::parallel_for(n, cfg.run.parallelism, [&](std::size_t i) {
    try {
      results[i] = qfts::decompose(split.examples[i], client, cfg.run.templates,
                                   cfg.run.budget.estimator);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  std::filesystem::create_directories(cfg.run.out_dir);
  const std::filesystem::path out =
      std::filesystem::path(cfg.run.out_dir) / "decompositions.jsonl";
  std::ofstream os(out);
  if (!os) throw qfts::Error("cannot write " + out.string());
  std::size_t failed = 0, fallbacks = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (results[i]) {
      qfts::json j = *results[i];
      j["example_id"] = split.examples[i].example_id;
      os << j.dump() << "\n";
      if (results[i]->fallback_used) ++fallbacks;
    } else {
      ++failed;
      std::cerr << "failed " << split.examples[i].example_id << ": " << *errors[i] << "\n";
    }
  }
  std::cout << "decomposed " << (n - failed) << "/" << n << " examples (" << fallbacks
            << " fallbacks) -> " << out.string() << "\n";
  return failed == 0 ? kExitOk : kExitPartial;
}

// Offline scoring of externally produced summaries. Candidate records are
// line-delimited JSON: {"example_id", "candidate" (or "summary"), optional
// "reference", optional "table"}. References and tables can also come from a
// dataset file keyed by example_id.
int cmd_score(qfts::AppConfig cfg, const std::string& candidates_path,
              const std::string& dataset_path, const std::string& out_dir) {
  std::map<std::string, const qfts::QtExample*> by_id;
  qfts::LoadResult loaded;
  if (!dataset_path.empty()) {
    loaded = qfts::load_dataset(dataset_path, cfg.run.schema_mode, cfg.run.field_map);
    for (const qfts::QtExample& ex : loaded.examples) by_id[ex.example_id] = &ex;
  }

  std::ifstream in(candidates_path);
  if (!in) throw qfts::DataError("cannot open candidates file: " + candidates_path);
  std::vector<qfts::MetricReport> reports;
  std::vector<std::pair<qfts::TokenSequence, std::vector<qfts::TokenSequence>>> bleu_pairs;
  std::string out_lines;
  std::string line;
  std::size_t lineno = 0, skipped = 0, no_table = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (qfts::trim(line).empty()) continue;
    try {
      const qfts::json j = qfts::json::parse(line);
      const std::string id = j.value("example_id", "line-" + std::to_string(lineno));
      std::string candidate = j.value("candidate", j.value("summary", ""));
      if (candidate.empty()) throw qfts::DataError("record has no candidate text");
      std::string reference = j.value("reference", "");
      const qfts::QtExample* ex = nullptr;
      if (auto it = by_id.find(id); it != by_id.end()) ex = it->second;
      if (reference.empty() && ex != nullptr && ex->reference_summary)
        reference = *ex->reference_summary;
      if (reference.empty()) throw qfts::DataError("no reference available");
      std::optional<qfts::Table> inline_table;
      const qfts::Table* table = nullptr;
      if (j.contains("table")) {
        qfts::json rec{{"example_id", id}, {"query", "-"}, {"table", j["table"]}};
        inline_table = qfts::detail::parse_example(rec, {}, qfts::SchemaMode::lenient).table;
        table = &*inline_table;
      } else if (ex != nullptr) {
        table = &ex->table;
      }
      if (table == nullptr) {
        ++no_table;
        std::cerr << "warning: " << id << ": no table available, PARENT omitted\n";
      }
      const qfts::MetricReport r =
          qfts::score_example(candidate, reference, table, cfg.run.metrics);
      reports.push_back(r);
      bleu_pairs.emplace_back(qfts::tokenize(candidate, cfg.run.metrics.normalizer),
                              std::vector<qfts::TokenSequence>{
                                  qfts::tokenize(reference, cfg.run.metrics.normalizer)});
      qfts::json rec{{"example_id", id}};
      rec["metrics"] = r;
      out_lines += rec.dump() + "\n";
      char buf[200];
      std::snprintf(buf, sizeof(buf),
                    "%-24s BLEU %.4f  ROUGE-1 %.4f  ROUGE-2 %.4f  ROUGE-L %.4f  PARENT %s\n",
                    id.c_str(), r.bleu, r.rouge1.f, r.rouge2.f, r.rougeL.f,
                    r.parent ? qfts::detail::fmt4(r.parent->f).c_str() : "n/a");
      std::cout << buf;
    } catch (const qfts::Error& e) {
      ++skipped;
      std::cerr << "skipped line " << lineno << ": " << e.what() << "\n";
    }
  }
  if (reports.empty()) throw qfts::DataError("no scorable records in " + candidates_path);

  qfts::AggregateReport agg = qfts::aggregate(reports);
  agg.corpus_bleu = qfts::corpus_bleu(bleu_pairs, cfg.run.metrics.bleu_max_n);
  char buf[240];
  std::snprintf(buf, sizeof(buf),
                "%-24s BLEU %.4f  ROUGE-1 %.4f  ROUGE-2 %.4f  ROUGE-L %.4f  PARENT %s  "
                "(corpus BLEU %.4f, n=%zu)\n",
                "aggregate", agg.mean.bleu, agg.mean.rouge1.f, agg.mean.rouge2.f,
                agg.mean.rougeL.f,
                agg.mean.parent ? qfts::detail::fmt4(agg.mean.parent->f).c_str() : "n/a",
                *agg.corpus_bleu, agg.count);
  std::cout << buf;
  std::cout << "scoring: normalizer=" << qfts::to_string(cfg.run.metrics.normalizer)
            << ", rougeL_beta=1, parent_lambda="
            << qfts::detail::fmt4(cfg.run.metrics.parent_lambda) << "\n";

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream os(std::filesystem::path(out_dir) / "metrics.jsonl");
    os << out_lines;
    qfts::json aj{{"example_id", nullptr}, {"aggregate", agg}};
    os << aj.dump() << "\n";
  }
  return skipped == 0 ? kExitOk : kExitPartial;
}

int cmd_annotate(qfts::AppConfig cfg, const std::string& run_dir, const std::string& rater,
                 std::optional<std::string> mode_name, bool rate_decomposition) {
  const qfts::RunReport report = qfts::load_run_report(run_dir);
  std::optional<qfts::Mode> mode;
  if (mode_name) mode = qfts::mode_from_string(*mode_name);
  const qfts::Worklist worklist = qfts::load_or_create_worklist(
      run_dir, report, cfg.annotate_size, cfg.annotate_seed, mode);
  const qfts::SessionResult result = qfts::run_annotation_session(
      run_dir, report, worklist, rater, rate_decomposition, std::cin, std::cout);
  std::cout << "session: " << result.annotated << " annotated, " << result.skipped
            << " previously done, " << result.remaining << " remaining\n";
  return kExitOk;
}

int cmd_agreement(const std::string& run_dir) {
  const qfts::RunReport report = qfts::load_run_report(run_dir);
  const std::filesystem::path wl_path =
      qfts::annotations_dir(run_dir) / "worklist.json";
  std::ifstream wl_in(wl_path);
  if (!wl_in) throw qfts::DataError("no worklist found at " + wl_path.string());
  std::vector<std::string> worklist;
  qfts::json::parse(wl_in).at("ids").get_to(worklist);

  const auto by_rater = qfts::load_all_annotations(run_dir);
  const qfts::AgreementReport agreement = qfts::agreement_report(by_rater, worklist);

  std::string model = "summarizer";
  if (report.config_snapshot.contains("summarizer") &&
      report.config_snapshot["summarizer"].contains("model_name"))
    model = report.config_snapshot["summarizer"]["model_name"].get<std::string>();
  std::cout << qfts::render_agreement(agreement, model);

  std::ofstream os(std::filesystem::path(run_dir) / "agreement.json");
  os << qfts::json(agreement).dump(2) << "\n";

  // Error tally over all raters' records.
  std::vector<qfts::AnnotationRecord> all;
  for (const auto& [r, records] : by_rater)
    all.insert(all.end(), records.begin(), records.end());
  const qfts::ErrorTally tally = qfts::error_tally(all);
  std::cout << "error categories (" << tally.total << " records):\n";
  for (const auto& [name, count] : tally.counts)
    std::cout << "  " << name << ": " << count << "\n";
  return kExitOk;
}

int cmd_report(const std::string& run_dir) {
  const qfts::RunReport report = qfts::load_run_report(run_dir);
  std::cout << qfts::render_human_table(report);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"query-focused table summarization via table decomposition"};
  app.require_subcommand(1);

  CommonFlags common;
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file")->envname("QFTS_CONFIG");
  app.add_flag("--offline", common.offline, "serve every model call from the cache");

  // Shared run/dataset overrides.
  std::string dataset, out_dir, modes_csv, budget, base_url_decomposer, base_url_summarizer;
  std::optional<std::size_t> size, parallelism;
  std::optional<std::uint64_t> seed;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--dataset", dataset, "dataset file (JSON array or JSONL)");
    sub->add_option("--size", size, "sample size");
    sub->add_option("--seed", seed, "sampling seed");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--parallelism", parallelism, "worker pool bound");
    sub->add_option("--decomposer-url", base_url_decomposer, "decomposer endpoint base URL");
    sub->add_option("--summarizer-url", base_url_summarizer, "summarizer endpoint base URL");
  };

  CLI::App* run_cmd = app.add_subcommand("run", "full pipeline: summarize and score a sample");
  add_common(run_cmd);
  run_cmd->add_option("--modes", modes_csv, "comma-separated: original,decomposed");
  run_cmd->add_option("--budget", budget, "token budget preset (512 or 1024)");

  CLI::App* dec_cmd = app.add_subcommand("decompose", "decompose a sample and write records");
  add_common(dec_cmd);

  CLI::App* score_cmd = app.add_subcommand("score", "score externally produced summaries");
  std::string candidates;
  score_cmd->add_option("--candidates", candidates, "JSONL candidate summaries")->required();
  score_cmd->add_option("--dataset", dataset, "dataset providing references and tables");
  score_cmd->add_option("--out", out_dir, "directory for metrics.jsonl");

  CLI::App* ann_cmd = app.add_subcommand("annotate", "interactive rating session");
  std::string run_dir, rater, ann_mode;
  bool rate_decomposition = false;
  ann_cmd->add_option("--run", run_dir, "run directory")->required();
  ann_cmd->add_option("--rater", rater, "rater id")->required();
  ann_cmd->add_option("--size", size, "worklist size (first session only)");
  ann_cmd->add_option("--seed", seed, "worklist seed (first session only)");
  ann_cmd->add_option("--mode", ann_mode, "arm to annotate: original or decomposed");
  ann_cmd->add_flag("--decomposition-quality", rate_decomposition,
                    "also rate decomposition completeness");

  CLI::App* agr_cmd = app.add_subcommand("agreement", "inter-rater agreement and tallies");
  agr_cmd->add_option("--run", run_dir, "run directory")->required();

  CLI::App* rep_cmd = app.add_subcommand("report", "re-render the human table from a run");
  rep_cmd->add_option("--run", run_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (!config_path.empty()) common.config_file = config_path;
    qfts::AppConfig cfg = resolve_config(common);
    if (!dataset.empty()) cfg.run.dataset_path = dataset;
    if (size) cfg.run.sample_size = *size;
    if (seed) {
      cfg.run.seed = *seed;
      cfg.annotate_seed = *seed;
    }
    if (!out_dir.empty()) cfg.run.out_dir = out_dir;
    if (parallelism) cfg.run.parallelism = *parallelism;
    if (!base_url_decomposer.empty()) cfg.run.decomposer.base_url = base_url_decomposer;
    if (!base_url_summarizer.empty()) cfg.run.summarizer.base_url = base_url_summarizer;
    if (!modes_csv.empty()) {
      cfg.run.modes.clear();
      std::size_t start = 0;
      while (start <= modes_csv.size()) {
        std::size_t comma = modes_csv.find(',', start);
        if (comma == std::string::npos) comma = modes_csv.size();
        const std::string m = qfts::trim(modes_csv.substr(start, comma - start));
        if (!m.empty()) cfg.run.modes.push_back(qfts::mode_from_string(m));
        start = comma + 1;
      }
    }
    if (!budget.empty()) cfg.run.budget = qfts::AppConfig::parse_budget(qfts::json(budget));
    if (size) cfg.annotate_size = *size;

    if (run_cmd->parsed()) return cmd_run(std::move(cfg));
    if (dec_cmd->parsed()) return cmd_decompose(std::move(cfg));
    if (score_cmd->parsed()) return cmd_score(std::move(cfg), candidates, dataset, out_dir);
    if (ann_cmd->parsed())
      return cmd_annotate(std::move(cfg), run_dir, rater,
                          ann_mode.empty() ? std::nullopt
                                           : std::optional<std::string>(ann_mode),
                          rate_decomposition);
    if (agr_cmd->parsed()) return cmd_agreement(run_dir);
    if (rep_cmd->parsed()) return cmd_report(run_dir);
    std::cerr << "no subcommand\n";
    return kExitConfig;
  } catch (const qfts::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const qfts::DataError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}
