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

#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "qfts/error.hpp"
#include "qfts/http_client.hpp"
#include "qfts/metrics.hpp"
#include "qfts/summarize.hpp"
#include "qfts/table.hpp"

namespace qfts {

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  std::string dataset_path;
  SchemaMode schema_mode = SchemaMode::lenient;
  FieldMap field_map;
  std::size_t sample_size = 10;
  std::uint64_t seed = 7;
  std::vector<Mode> modes = {Mode::original, Mode::decomposed};
  TokenBudget budget = TokenBudget::preset_512();
  LlmClientConfig decomposer;
  LlmClientConfig summarizer;
  std::size_t parallelism = 4;
  std::string out_dir = "qfts-run";
  MetricsConfig metrics;
  PromptTemplates templates;

  bool wants(Mode m) const {
    for (Mode x : modes)
      if (x == m) return true;
    return false;
  }

  // Contradictions are config errors, raised before any network traffic.
  void validate() const {
    if (dataset_path.empty()) throw ConfigError("run config: dataset_path is required");
    if (modes.empty()) throw ConfigError("run config: at least one mode is required");
    if (parallelism < 1) throw ConfigError("run config: parallelism must be >= 1");
    budget.validate();
    if (!summarizer.configured())
      throw ConfigError("run config: summarizer endpoint is not configured");
    if (wants(Mode::decomposed) && !decomposer.configured())
      throw ConfigError(
          "run config: decomposed mode requested but no decomposer endpoint configured");
  }

  // Everything that determines the run's outputs; local paths for cache and
  // output are excluded so a replayed run serializes identically anywhere.
  json snapshot() const {
    json modes_j = json::array();
    for (Mode m : modes) modes_j.push_back(to_string(m));
    return json{
        {"dataset_path", dataset_path},
        {"schema_mode", schema_mode == SchemaMode::strict ? "strict" : "lenient"},
        {"sample_size", sample_size},
        {"seed", seed},
        {"modes", modes_j},
        {"budget",
         {{"max_tokens", budget.max_tokens},
          {"estimator",
           budget.estimator == TokenEstimator::whitespace_words ? "whitespace_words"
                                                                : "chars_div_4"}}},
        {"decomposer", decomposer},
        {"summarizer", summarizer},
        {"metrics",
         {{"normalizer", to_string(metrics.normalizer)},
          {"bleu_max_n", metrics.bleu_max_n},
          {"parent_lambda", metrics.parent_lambda},
          {"rougeL_beta", 1}}},
        {"flatten_style", kFlattenStyleName},
        {"prompt_templates",
         {{"decomposition_preamble", templates.decomposition_preamble},
          {"decomposition_body", templates.decomposition_body},
          {"summarization_preamble", templates.summarization_preamble},
          {"summarization_body", templates.summarization_body}}}};
  }
};

// ---------------------------------------------------------------------------
// Run records

struct PerExampleRecord {
  std::string example_id;
  Mode mode = Mode::original;
  std::string query;
  std::optional<std::string> reference_summary;
  std::string table_markdown;  // the table the summarizer saw (decomposed or original)
  std::string summary_text;
  bool truncated_input = false;
  std::size_t prompt_token_estimate = 0;
  std::string summarizer_fingerprint;
  std::string decomposer_fingerprint;         // empty in the original arm
  std::vector<std::string> selected_columns;  // decomposed arm only
  bool fallback_used = false;
  std::string raw_decomposer_output;
  std::optional<MetricReport> metrics;  // absent when the example has no reference
};

struct FailureRecord {
  std::string example_id;
  std::string error;
};

struct ModeReport {
  Mode mode = Mode::original;
  std::optional<AggregateReport> aggregate;  // absent when nothing was scored
  std::vector<PerExampleRecord> records;     // successes, in sample order
  std::vector<FailureRecord> failures;
  double fallback_rate = 0.0;    // decomposed arm: fallbacks / successes
  double truncation_rate = 0.0;  // truncated inputs / successes
};

struct RunReport {
  json config_snapshot;
  std::size_t sample_size = 0;
  std::vector<ModeReport> modes;

  const ModeReport* find(Mode m) const {
    for (const ModeReport& r : modes)
      if (r.mode == m) return &r;
    return nullptr;
  }
};

inline void to_json(json& j, const PerExampleRecord& r) {
  j = json{{"example_id", r.example_id},
           {"mode", to_string(r.mode)},
           {"query", r.query},
           {"reference_summary", r.reference_summary ? json(*r.reference_summary) : json()},
           {"table_markdown", r.table_markdown},
           {"summary_text", r.summary_text},
           {"truncated_input", r.truncated_input},
           {"prompt_token_estimate", r.prompt_token_estimate},
           {"summarizer_fingerprint", r.summarizer_fingerprint},
           {"decomposer_fingerprint", r.decomposer_fingerprint},
           {"selected_columns", r.selected_columns},
           {"fallback_used", r.fallback_used},
           {"raw_decomposer_output", r.raw_decomposer_output}};
  if (r.metrics) j["metrics"] = *r.metrics;
  else j["metrics"] = nullptr;
}

inline void from_json(const json& j, PerExampleRecord& r) {
  j.at("example_id").get_to(r.example_id);
  r.mode = mode_from_string(j.at("mode").get<std::string>());
  j.at("query").get_to(r.query);
  if (j.contains("reference_summary") && !j["reference_summary"].is_null())
    r.reference_summary = j["reference_summary"].get<std::string>();
  else
    r.reference_summary = std::nullopt;
  j.at("table_markdown").get_to(r.table_markdown);
  j.at("summary_text").get_to(r.summary_text);
  j.at("truncated_input").get_to(r.truncated_input);
  j.at("prompt_token_estimate").get_to(r.prompt_token_estimate);
  j.at("summarizer_fingerprint").get_to(r.summarizer_fingerprint);
  j.at("decomposer_fingerprint").get_to(r.decomposer_fingerprint);
  j.at("selected_columns").get_to(r.selected_columns);
  j.at("fallback_used").get_to(r.fallback_used);
  j.at("raw_decomposer_output").get_to(r.raw_decomposer_output);
  if (j.contains("metrics") && !j["metrics"].is_null())
    r.metrics = j["metrics"].get<MetricReport>();
  else
    r.metrics = std::nullopt;
}

inline void to_json(json& j, const FailureRecord& f) {
  j = json{{"example_id", f.example_id}, {"error", f.error}};
}

inline void from_json(const json& j, FailureRecord& f) {
  j.at("example_id").get_to(f.example_id);
  j.at("error").get_to(f.error);
}

inline void to_json(json& j, const ModeReport& m) {
  j = json{{"mode", to_string(m.mode)},
           {"records", m.records},
           {"failures", m.failures},
           {"fallback_rate", m.fallback_rate},
           {"truncation_rate", m.truncation_rate}};
  if (m.aggregate) j["aggregate"] = *m.aggregate;
  else j["aggregate"] = nullptr;
}

inline void from_json(const json& j, ModeReport& m) {
  m.mode = mode_from_string(j.at("mode").get<std::string>());
  j.at("records").get_to(m.records);
  j.at("failures").get_to(m.failures);
  j.at("fallback_rate").get_to(m.fallback_rate);
  j.at("truncation_rate").get_to(m.truncation_rate);
  if (j.contains("aggregate") && !j["aggregate"].is_null())
    m.aggregate = j["aggregate"].get<AggregateReport>();
  else
    m.aggregate = std::nullopt;
}

inline void to_json(json& j, const RunReport& r) {
  j = json{{"config", r.config_snapshot}, {"sample_size", r.sample_size}, {"modes", r.modes}};
}

inline void from_json(const json& j, RunReport& r) {
  r.config_snapshot = j.at("config");
  j.at("sample_size").get_to(r.sample_size);
  j.at("modes").get_to(r.modes);
}

// ---------------------------------------------------------------------------
// Execution

namespace detail {

// Bounded worker pool over [0, n). fn must not throw.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  }
  for (std::thread& t : pool) t.join();
}

}  // namespace detail

// Full batch run: for each requested mode, summarize every sampled example,
// score successes against their references, and aggregate. A failed example
// is recorded and excluded from aggregation instead of aborting the arm.
// With a warm cache the whole run replays offline, bit for bit.
inline RunReport run(const RunConfig& cfg) {
  cfg.validate();
  const LoadResult loaded = load_dataset(cfg.dataset_path, cfg.schema_mode, cfg.field_map);
  const DatasetSplit split = sample_split(loaded.examples, cfg.sample_size, cfg.seed, "run");

  HttpLlmClient summarizer(cfg.summarizer);
  std::unique_ptr<HttpLlmClient> decomposer;
  if (cfg.wants(Mode::decomposed)) decomposer = std::make_unique<HttpLlmClient>(cfg.decomposer);

  RunReport report;
  report.config_snapshot = cfg.snapshot();
  report.sample_size = split.examples.size();

  for (Mode mode : cfg.modes) {
    const std::size_t n = split.examples.size();
    std::vector<std::optional<PerExampleRecord>> slots(n);
    std::vector<std::optional<FailureRecord>> fails(n);

    detail::parallel_for(n, cfg.parallelism, [&](std::size_t i) {
      const QtExample& ex = split.examples[i];
      try {
        SummaryResult sr = summarize_example(ex, mode, cfg.budget, decomposer.get(),
                                             summarizer, cfg.templates);
        PerExampleRecord rec;
        rec.example_id = sr.example_id;
        rec.mode = mode;
        rec.query = ex.query;
        rec.reference_summary = ex.reference_summary;
        rec.table_markdown =
            to_markdown(sr.decomposition ? sr.decomposition->decomposed : ex.table);
        rec.summary_text = sr.summary_text;
        rec.truncated_input = sr.truncated_input;
        rec.prompt_token_estimate = sr.prompt_token_estimate;
        rec.summarizer_fingerprint = sr.summarizer_fingerprint;
        if (sr.decomposition) {
          rec.decomposer_fingerprint = sr.decomposition->request_fingerprint;
          rec.selected_columns = sr.decomposition->selected_columns;
          rec.fallback_used = sr.decomposition->fallback_used;
          rec.raw_decomposer_output = sr.decomposition->raw_model_output;
        }
        if (ex.reference_summary) {
          // PARENT grounds both arms in the table as loaded, so arm scores
          // stay comparable even when columns were dropped.
          rec.metrics =
              score_example(sr.summary_text, *ex.reference_summary, &ex.table, cfg.metrics);
        }
        slots[i] = std::move(rec);
      } catch (const Error& e) {
        fails[i] = FailureRecord{ex.example_id, e.what()};
      } catch (const std::exception& e) {
        fails[i] = FailureRecord{ex.example_id, std::string("unexpected: ") + e.what()};
      }
    });

    ModeReport mr;
    mr.mode = mode;
    std::vector<MetricReport> scored;
    std::vector<std::pair<TokenSequence, std::vector<TokenSequence>>> bleu_pairs;
    std::size_t truncated = 0, fallbacks = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (slots[i]) {
        const PerExampleRecord& rec = *slots[i];
        if (rec.truncated_input) ++truncated;
        if (rec.fallback_used) ++fallbacks;
        if (rec.metrics) {
          scored.push_back(*rec.metrics);
          bleu_pairs.emplace_back(
              tokenize(rec.summary_text, cfg.metrics.normalizer),
              std::vector<TokenSequence>{tokenize(*split.examples[i].reference_summary,
                                                  cfg.metrics.normalizer)});
        }
        mr.records.push_back(*slots[i]);
      } else if (fails[i]) {
        mr.failures.push_back(*fails[i]);
      }
    }
    if (!mr.records.empty()) {
      mr.truncation_rate = static_cast<double>(truncated) / mr.records.size();
      if (mode == Mode::decomposed)
        mr.fallback_rate = static_cast<double>(fallbacks) / mr.records.size();
    }
    if (!scored.empty()) {
      AggregateReport agg = aggregate(scored);
      agg.corpus_bleu = corpus_bleu(bleu_pairs, cfg.metrics.bleu_max_n);
      mr.aggregate = std::move(agg);
    }
    report.modes.push_back(std::move(mr));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Comparison

struct DeltaReport {
  double bleu = 0.0;
  Prf rouge1, rouge2, rougeL;
  std::optional<Prf> parent;
};

// Per-metric aggregate delta, decomposed minus original.
inline DeltaReport compare(const RunReport& report) {
  const ModeReport* orig = report.find(Mode::original);
  const ModeReport* dec = report.find(Mode::decomposed);
  if (orig == nullptr || dec == nullptr)
    throw DataError("compare: report must contain both the original and decomposed modes");
  if (!orig->aggregate || !dec->aggregate)
    throw DataError("compare: both modes need scored examples");
  auto sub = [](const Prf& a, const Prf& b) {
    return Prf{a.precision - b.precision, a.recall - b.recall, a.f - b.f};
  };
  DeltaReport d;
  const MetricReport& a = dec->aggregate->mean;
  const MetricReport& b = orig->aggregate->mean;
  d.bleu = a.bleu - b.bleu;
  d.rouge1 = sub(a.rouge1, b.rouge1);
  d.rouge2 = sub(a.rouge2, b.rouge2);
  d.rougeL = sub(a.rougeL, b.rougeL);
  if (a.parent && b.parent) d.parent = sub(*a.parent, *b.parent);
  return d;
}

// ---------------------------------------------------------------------------
// Emission

namespace detail {

inline std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

inline std::string fmt4_signed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%+.4f", v);
  return buf;
}

inline void check_accounting(const RunReport& report) {
  for (const ModeReport& m : report.modes) {
    if (m.records.size() + m.failures.size() != report.sample_size)
      throw Error("accounting violation in mode " + to_string(m.mode) + ": " +
                  std::to_string(m.records.size()) + " successes + " +
                  std::to_string(m.failures.size()) + " failures != sample size " +
                  std::to_string(report.sample_size));
  }
}

}  // namespace detail

// One row per mode, metric columns in the standard comparison layout, then a
// delta row when both arms ran. F values are shown for ROUGE and PARENT.
inline std::string render_human_table(const RunReport& report) {
  std::string out;
  auto line = [&out](const std::string& s) {
    out += s;
    out += "\n";
  };
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-12s %-8s %-8s %-8s %-8s %-8s", "mode", "BLEU", "ROUGE-1",
                "ROUGE-2", "ROUGE-L", "PARENT");
  line(buf);
  auto metric_row = [&](const std::string& label, double bleu_v, const Prf& r1, const Prf& r2,
                        const Prf& rl, const std::optional<Prf>& p, bool signed_fmt) {
    auto f = signed_fmt ? detail::fmt4_signed : detail::fmt4;
    std::snprintf(buf, sizeof(buf), "%-12s %-8s %-8s %-8s %-8s %-8s", label.c_str(),
                  f(bleu_v).c_str(), f(r1.f).c_str(), f(r2.f).c_str(), f(rl.f).c_str(),
                  p ? f(p->f).c_str() : "n/a");
    line(buf);
  };
  for (const ModeReport& m : report.modes) {
    if (m.aggregate)
      metric_row(to_string(m.mode), m.aggregate->mean.bleu, m.aggregate->mean.rouge1,
                 m.aggregate->mean.rouge2, m.aggregate->mean.rougeL, m.aggregate->mean.parent,
                 false);
    else
      line(to_string(m.mode) + "   (no scored examples)");
  }
  if (report.find(Mode::original) && report.find(Mode::decomposed) &&
      report.find(Mode::original)->aggregate && report.find(Mode::decomposed)->aggregate) {
    const DeltaReport d = compare(report);
    metric_row("delta", d.bleu, d.rouge1, d.rouge2, d.rougeL, d.parent, true);
  }
  line("");
  std::size_t total_failures = 0;
  for (const ModeReport& m : report.modes) total_failures += m.failures.size();
  line("failures: " + std::to_string(total_failures));
  for (const ModeReport& m : report.modes) {
    std::string stats = "  " + to_string(m.mode) + ": successes " +
                        std::to_string(m.records.size()) + ", failures " +
                        std::to_string(m.failures.size()) + ", truncation rate " +
                        detail::fmt4(m.truncation_rate);
    if (m.mode == Mode::decomposed)
      stats += ", fallback rate " + detail::fmt4(m.fallback_rate);
    if (m.aggregate && m.aggregate->corpus_bleu)
      stats += ", corpus BLEU " + detail::fmt4(*m.aggregate->corpus_bleu);
    line(stats);
  }
  const json& mc = report.config_snapshot.contains("metrics") ? report.config_snapshot["metrics"]
                                                              : json::object();
  line("scoring: normalizer=" +
       (mc.contains("normalizer") ? mc["normalizer"].get<std::string>() : "whitespace") +
       ", rougeL_beta=1, parent_lambda=" +
       (mc.contains("parent_lambda") ? detail::fmt4(mc["parent_lambda"].get<double>())
                                     : std::string("0.5000")) +
       ", bleu=sentence_mean+corpus");
  return out;
}

enum class ReportFormat { human_table, machine_records };

// Writes the run directory artifacts. Machine records: config snapshot, the
// self-contained report.json, and line-delimited per-example files. Human
// table: report.txt. Accounting is re-checked at emit time.
inline std::vector<std::filesystem::path> emit_report(const RunReport& report,
                                                      const std::filesystem::path& dir,
                                                      ReportFormat format) {
  detail::check_accounting(report);
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  auto write_file = [&](const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p);
    if (!out) throw Error("cannot write report file: " + p.string());
    out << content;
    written.push_back(p);
  };
  if (format == ReportFormat::human_table) {
    write_file(dir / "report.txt", render_human_table(report));
    return written;
  }
  write_file(dir / "config.json", report.config_snapshot.dump(2) + "\n");
  write_file(dir / "report.json", json(report).dump(2) + "\n");
  std::string summaries, metrics_lines, decomps;
  for (const ModeReport& m : report.modes) {
    for (const PerExampleRecord& r : m.records) {
      json s{{"example_id", r.example_id},
             {"mode", to_string(r.mode)},
             {"summary_text", r.summary_text},
             {"truncated_input", r.truncated_input},
             {"summarizer_fingerprint", r.summarizer_fingerprint},
             {"decomposer_fingerprint", r.decomposer_fingerprint}};
      summaries += s.dump() + "\n";
      if (r.metrics) {
        json mj{{"example_id", r.example_id}, {"mode", to_string(r.mode)}};
        mj["metrics"] = *r.metrics;
        metrics_lines += mj.dump() + "\n";
      }
      if (r.mode == Mode::decomposed) {
        json dj{{"example_id", r.example_id},
                {"selected_columns", r.selected_columns},
                {"fallback_used", r.fallback_used},
                {"raw_model_output", r.raw_decomposer_output}};
        decomps += dj.dump() + "\n";
      }
    }
    if (m.aggregate) {
      json aj{{"example_id", nullptr}, {"mode", to_string(m.mode)}, {"aggregate", *m.aggregate}};
      metrics_lines += aj.dump() + "\n";
    }
  }
  write_file(dir / "summaries.jsonl", summaries);
  write_file(dir / "metrics.jsonl", metrics_lines);
  if (!decomps.empty()) write_file(dir / "decompositions.jsonl", decomps);
  return written;
}

inline RunReport load_run_report(const std::filesystem::path& dir) {
  std::ifstream in(dir / "report.json");
  if (!in) throw DataError("cannot open report: " + (dir / "report.json").string());
  try {
    return json::parse(in).get<RunReport>();
  } catch (const json::exception& e) {
    throw DataError("invalid report.json: " + std::string(e.what()));
  }
}

}  // namespace qfts
