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

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qfts/error.hpp"
#include "qfts/harness.hpp"
#include "qfts/metrics.hpp"
#include "qfts/sampling.hpp"

namespace qfts {

// ---------------------------------------------------------------------------
// Records

enum class ErrorCategory {
  factual_incorrectness,
  irrelevant_information,
  hallucination,
  repetition,
  correct
};

inline const std::vector<std::pair<ErrorCategory, std::string>>& error_category_names() {
  static const std::vector<std::pair<ErrorCategory, std::string>> names = {
      {ErrorCategory::factual_incorrectness, "factual_incorrectness"},
      {ErrorCategory::irrelevant_information, "irrelevant_information"},
      {ErrorCategory::hallucination, "hallucination"},
      {ErrorCategory::repetition, "repetition"},
      {ErrorCategory::correct, "correct"}};
  return names;
}

inline std::string to_string(ErrorCategory c) {
  for (const auto& [cat, name] : error_category_names())
    if (cat == c) return name;
  return "unknown";
}

inline ErrorCategory error_category_from_string(const std::string& s) {
  for (const auto& [cat, name] : error_category_names())
    if (name == s) return cat;
  throw DataError("unknown error category: " + s);
}

struct AnnotationRecord {
  std::string example_id;
  std::string rater_id;
  int accuracy = 0;   // 1..5
  int relevance = 0;  // 1..5
  int clarity = 0;    // 1..5
  ErrorCategory error_category = ErrorCategory::correct;
  std::optional<int> decomposition_quality;  // 1..5, separate review pass
  std::string timestamp;

  void validate() const {
    auto in_scale = [](int v) { return v >= 1 && v <= 5; };
    if (!in_scale(accuracy) || !in_scale(relevance) || !in_scale(clarity))
      throw DataError("annotation scores must be in 1..5");
    if (decomposition_quality && !in_scale(*decomposition_quality))
      throw DataError("decomposition quality must be in 1..5");
    if (example_id.empty() || rater_id.empty())
      throw DataError("annotation needs example_id and rater_id");
  }
};

inline void to_json(json& j, const AnnotationRecord& r) {
  j = json{{"example_id", r.example_id},
           {"rater_id", r.rater_id},
           {"accuracy", r.accuracy},
           {"relevance", r.relevance},
           {"clarity", r.clarity},
           {"error_category", to_string(r.error_category)},
           {"decomposition_quality",
            r.decomposition_quality ? json(*r.decomposition_quality) : json()},
           {"timestamp", r.timestamp}};
}

inline void from_json(const json& j, AnnotationRecord& r) {
  j.at("example_id").get_to(r.example_id);
  j.at("rater_id").get_to(r.rater_id);
  j.at("accuracy").get_to(r.accuracy);
  j.at("relevance").get_to(r.relevance);
  j.at("clarity").get_to(r.clarity);
  r.error_category = error_category_from_string(j.at("error_category").get<std::string>());
  if (j.contains("decomposition_quality") && !j["decomposition_quality"].is_null())
    r.decomposition_quality = j["decomposition_quality"].get<int>();
  else
    r.decomposition_quality = std::nullopt;
  if (j.contains("timestamp")) j.at("timestamp").get_to(r.timestamp);
}

// ---------------------------------------------------------------------------
// Worklists
//
// Every rater sees the same ids in the same order. The worklist is sampled
// once per run directory and persisted, so later sessions and later raters
// load it instead of resampling.

struct Worklist {
  std::vector<std::string> ids;
  Mode mode = Mode::decomposed;
  std::uint64_t seed = 0;
};

inline std::vector<std::string> sample_for_annotation(const RunReport& report, Mode mode,
                                                      std::size_t size, std::uint64_t seed) {
  const ModeReport* mr = report.find(mode);
  if (mr == nullptr) throw DataError("run has no " + to_string(mode) + " arm");
  std::vector<std::string> ids;
  for (const PerExampleRecord& r : mr->records) ids.push_back(r.example_id);
  if (size > ids.size())
    throw DataError("annotation sample of " + std::to_string(size) + " exceeds " +
                    std::to_string(ids.size()) + " successful examples");
  return sample_without_replacement(ids, size, seed);
}

// Mode-agnostic convenience: prefers the decomposed arm when present.
inline std::vector<std::string> sample_for_annotation(const RunReport& report, std::size_t size,
                                                      std::uint64_t seed) {
  const Mode mode = report.find(Mode::decomposed) != nullptr &&
                            !report.find(Mode::decomposed)->records.empty()
                        ? Mode::decomposed
                        : report.modes.at(0).mode;
  return sample_for_annotation(report, mode, size, seed);
}

inline std::filesystem::path annotations_dir(const std::filesystem::path& run_dir) {
  return run_dir / "annotations";
}

inline Worklist load_or_create_worklist(const std::filesystem::path& run_dir,
                                        const RunReport& report, std::size_t size,
                                        std::uint64_t seed,
                                        std::optional<Mode> mode = std::nullopt) {
  const std::filesystem::path dir = annotations_dir(run_dir);
  const std::filesystem::path file = dir / "worklist.json";
  if (std::filesystem::exists(file)) {
    std::ifstream in(file);
    const json j = json::parse(in);
    Worklist w;
    j.at("ids").get_to(w.ids);
    w.mode = mode_from_string(j.at("mode").get<std::string>());
    j.at("seed").get_to(w.seed);
    return w;
  }
  Worklist w;
  w.mode = mode.value_or(report.find(Mode::decomposed) != nullptr &&
                                 !report.find(Mode::decomposed)->records.empty()
                             ? Mode::decomposed
                             : report.modes.at(0).mode);
  w.seed = seed;
  w.ids = sample_for_annotation(report, w.mode, size, seed);
  std::filesystem::create_directories(dir);
  std::ofstream out(file);
  out << json{{"ids", w.ids}, {"mode", to_string(w.mode)}, {"seed", w.seed}}.dump(2) << "\n";
  return w;
}

// ---------------------------------------------------------------------------
// Persistence (append-only, one line-delimited file per rater)

inline std::filesystem::path rater_file(const std::filesystem::path& run_dir,
                                        const std::string& rater_id) {
  return annotations_dir(run_dir) / (rater_id + ".jsonl");
}

inline void append_annotation(const std::filesystem::path& file, const AnnotationRecord& rec) {
  rec.validate();
  std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::app);
  if (!out) throw Error("cannot append to annotation file: " + file.string());
  out << json(rec).dump() << "\n";
}

inline std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& file) {
  std::vector<AnnotationRecord> records;
  std::ifstream in(file);
  if (!in) return records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      records.push_back(json::parse(line).get<AnnotationRecord>());
    } catch (const json::exception& e) {
      throw DataError(file.string() + ":" + std::to_string(lineno) +
                      ": bad annotation record: " + e.what());
    }
  }
  return records;
}

// rater id -> records, discovered from <run>/annotations/*.jsonl.
inline std::map<std::string, std::vector<AnnotationRecord>> load_all_annotations(
    const std::filesystem::path& run_dir) {
  std::map<std::string, std::vector<AnnotationRecord>> by_rater;
  const std::filesystem::path dir = annotations_dir(run_dir);
  if (!std::filesystem::exists(dir)) return by_rater;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".jsonl") continue;
    by_rater[entry.path().stem().string()] = load_annotations(entry.path());
  }
  return by_rater;
}

// ---------------------------------------------------------------------------
// Tally

struct ErrorTally {
  std::map<std::string, std::size_t> counts;  // category name -> count
  std::size_t total = 0;
};

// Exhaustive counts over all five categories; sums to the record count.
inline ErrorTally error_tally(const std::vector<AnnotationRecord>& records) {
  if (records.empty()) throw DataError("error_tally: no records");
  ErrorTally tally;
  for (const auto& [cat, name] : error_category_names()) tally.counts[name] = 0;
  for (const AnnotationRecord& r : records) {
    ++tally.counts[to_string(r.error_category)];
    ++tally.total;
  }
  return tally;
}

// ---------------------------------------------------------------------------
// Agreement

struct AgreementReport {
  double icc_single = 0.0;       // ICC(2,1), pooled over the three criteria
  double icc_average = 0.0;      // ICC(2,k), pooled over the three criteria
  double mean_accuracy = 0.0;
  double mean_relevance = 0.0;
  double mean_clarity = 0.0;
  std::optional<double> mean_decomposition_quality;
  std::size_t subjects = 0;
  std::size_t raters = 0;
};

// Builds subjects x raters matrices from the common worklist and computes
// ICC. Raters must cover the whole worklist; otherwise the error names every
// missing (rater, example) pair. When a rater annotated an example more than
// once the latest record wins (files are append-only).
inline AgreementReport agreement_report(
    const std::map<std::string, std::vector<AnnotationRecord>>& by_rater,
    const std::vector<std::string>& worklist) {
  if (by_rater.size() < 2) throw DataError("agreement needs at least 2 raters");
  if (worklist.size() < 2) throw DataError("agreement needs at least 2 subjects");

  std::map<std::string, std::map<std::string, AnnotationRecord>> latest;  // rater -> id -> rec
  for (const auto& [rater, records] : by_rater)
    for (const AnnotationRecord& r : records) latest[rater][r.example_id] = r;

  std::string missing;
  for (const auto& [rater, by_id] : latest)
    for (const std::string& id : worklist)
      if (by_id.find(id) == by_id.end()) missing += " (" + rater + ", " + id + ")";
  if (!missing.empty()) throw DataError("incomplete annotation coverage:" + missing);

  const std::size_t n = worklist.size();
  const std::size_t k = by_rater.size();
  AgreementReport out;
  out.subjects = n;
  out.raters = k;

  // Pooled matrix: one row per (example, criterion), one column per rater.
  RatingMatrix pooled;
  pooled.subjects = 3 * n;
  pooled.raters = k;
  pooled.data.resize(pooled.subjects * k);
  double sum_acc = 0.0, sum_rel = 0.0, sum_cla = 0.0, sum_dq = 0.0;
  std::size_t dq_count = 0;
  std::size_t col = 0;
  for (const auto& [rater, by_id] : latest) {
    for (std::size_t i = 0; i < n; ++i) {
      const AnnotationRecord& r = by_id.at(worklist[i]);
      pooled.data[(0 * n + i) * k + col] = r.accuracy;
      pooled.data[(1 * n + i) * k + col] = r.relevance;
      pooled.data[(2 * n + i) * k + col] = r.clarity;
      sum_acc += r.accuracy;
      sum_rel += r.relevance;
      sum_cla += r.clarity;
      if (r.decomposition_quality) {
        sum_dq += *r.decomposition_quality;
        ++dq_count;
      }
    }
    ++col;
  }
  const double cells = static_cast<double>(n * k);
  out.mean_accuracy = sum_acc / cells;
  out.mean_relevance = sum_rel / cells;
  out.mean_clarity = sum_cla / cells;
  if (dq_count > 0) out.mean_decomposition_quality = sum_dq / static_cast<double>(dq_count);
  out.icc_single = icc(pooled, IccForm::two_way_random_single);
  out.icc_average = icc(pooled, IccForm::two_way_random_average);
  return out;
}

inline void to_json(json& j, const AgreementReport& a) {
  j = json{{"icc_single", a.icc_single},
           {"icc_average", a.icc_average},
           {"icc_forms", {"two_way_random_single", "two_way_random_average"}},
           {"pooling", "accuracy+relevance+clarity"},
           {"mean_accuracy", a.mean_accuracy},
           {"mean_relevance", a.mean_relevance},
           {"mean_clarity", a.mean_clarity},
           {"mean_decomposition_quality",
            a.mean_decomposition_quality ? json(*a.mean_decomposition_quality) : json()},
           {"subjects", a.subjects},
           {"raters", a.raters}};
}

// Human evaluation table: one row per model, criterion means as columns.
inline std::string render_agreement(const AgreementReport& a, const std::string& model_name) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-24s %-10s %-10s %-10s\n", "model", "accuracy", "relevance",
                "clarity");
  out += buf;
  std::snprintf(buf, sizeof(buf), "%-24s %-10.2f %-10.2f %-10.2f\n", model_name.c_str(),
                a.mean_accuracy, a.mean_relevance, a.mean_clarity);
  out += buf;
  std::snprintf(buf, sizeof(buf), "ICC: single %.4f, average %.4f (two-way random, %zu subjects x %zu raters, criteria pooled)\n",
                a.icc_single, a.icc_average, a.subjects, a.raters);
  out += buf;
  if (a.mean_decomposition_quality) {
    std::snprintf(buf, sizeof(buf), "decomposition quality mean: %.2f\n",
                  *a.mean_decomposition_quality);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Interactive rating session
//
// A plain terminal prompt flow. The worklist is fixed up front and answers
// never steer the pipeline; sessions are resumable because already-annotated
// ids are skipped on start.

inline constexpr const char* kDecompositionQualityAnchors =
    "  1 = nearly all of the information the question needs is gone\n"
    "  2 = a little of the needed information survives; most is gone\n"
    "  3 = most of the needed information survives, with real gaps\n"
    "  4 = everything needed survives, but irrelevant columns remain or minor"
    " details are lost\n"
    "  5 = exactly the needed information and nothing else\n";

namespace detail {

// Prompts until the rater enters an integer in [lo, hi]. Returns nullopt on
// end of input.
inline std::optional<int> prompt_score(std::istream& in, std::ostream& out,
                                       const std::string& label, int lo, int hi) {
  std::string line;
  for (;;) {
    out << label << " (" << lo << "-" << hi << "): " << std::flush;
    if (!std::getline(in, line)) return std::nullopt;
    try {
      const int v = std::stoi(trim(line));
      if (v >= lo && v <= hi) return v;
    } catch (const std::exception&) {
    }
    out << "  please enter a whole number between " << lo << " and " << hi << "\n";
  }
}

}  // namespace detail

// Collects one annotation for one worklist item. Returns nullopt when the
// input stream ends mid-item (nothing is persisted for the item).
inline std::optional<AnnotationRecord> record_annotation(const PerExampleRecord& item,
                                                         const std::string& rater_id,
                                                         bool rate_decomposition,
                                                         std::istream& in, std::ostream& out) {
  out << "\n=== example " << item.example_id << " ===\n";
  out << "query: " << item.query << "\n\n";
  out << "table shown to the summarizer:\n" << item.table_markdown << "\n\n";
  if (item.mode == Mode::decomposed) {
    out << "selected columns: ";
    if (item.fallback_used) {
      out << "(fallback: all columns kept)";
    } else {
      for (std::size_t i = 0; i < item.selected_columns.size(); ++i) {
        if (i > 0) out << ", ";
        out << item.selected_columns[i];
      }
    }
    out << "\n\n";
  }
  out << "generated summary:\n" << item.summary_text << "\n\n";
  if (item.reference_summary) out << "reference summary:\n" << *item.reference_summary << "\n\n";

  AnnotationRecord rec;
  rec.example_id = item.example_id;
  rec.rater_id = rater_id;
  rec.timestamp = DiskCache::iso8601_now();

  auto acc = detail::prompt_score(in, out, "accuracy", 1, 5);
  if (!acc) return std::nullopt;
  rec.accuracy = *acc;
  auto rel = detail::prompt_score(in, out, "relevance", 1, 5);
  if (!rel) return std::nullopt;
  rec.relevance = *rel;
  auto cla = detail::prompt_score(in, out, "clarity", 1, 5);
  if (!cla) return std::nullopt;
  rec.clarity = *cla;

  out << "error category:\n";
  const auto& cats = error_category_names();
  for (std::size_t i = 0; i < cats.size(); ++i)
    out << "  " << (i + 1) << " = " << cats[i].second << "\n";
  auto cat = detail::prompt_score(in, out, "category", 1, static_cast<int>(cats.size()));
  if (!cat) return std::nullopt;
  rec.error_category = cats[static_cast<std::size_t>(*cat - 1)].first;

  if (rate_decomposition && item.mode == Mode::decomposed) {
    out << "decomposition completeness:\n" << kDecompositionQualityAnchors;
    auto dq = detail::prompt_score(in, out, "decomposition quality", 1, 5);
    if (!dq) return std::nullopt;
    rec.decomposition_quality = *dq;
  }
  return rec;
}

struct SessionResult {
  std::size_t annotated = 0;  // persisted during this session
  std::size_t skipped = 0;    // already had records from earlier sessions
  std::size_t remaining = 0;  // left unfinished (input ended early)
};

// Walks the shared worklist, skipping items this rater already covered, and
// appends each completed record immediately so interruption loses nothing.
inline SessionResult run_annotation_session(const std::filesystem::path& run_dir,
                                            const RunReport& report, const Worklist& worklist,
                                            const std::string& rater_id,
                                            bool rate_decomposition, std::istream& in,
                                            std::ostream& out) {
  const ModeReport* mr = report.find(worklist.mode);
  if (mr == nullptr) throw DataError("run has no " + to_string(worklist.mode) + " arm");
  std::map<std::string, const PerExampleRecord*> by_id;
  for (const PerExampleRecord& r : mr->records) by_id[r.example_id] = &r;

  const std::filesystem::path file = rater_file(run_dir, rater_id);
  std::set<std::string> done;
  for (const AnnotationRecord& r : load_annotations(file)) done.insert(r.example_id);

  SessionResult result;
  for (std::size_t i = 0; i < worklist.ids.size(); ++i) {
    const std::string& id = worklist.ids[i];
    if (done.count(id)) {
      ++result.skipped;
      continue;
    }
    const auto it = by_id.find(id);
    if (it == by_id.end())
      throw DataError("worklist item " + id + " has no stored summary in the run directory");
    out << "\n[item " << (i + 1) << " of " << worklist.ids.size() << "]";
    auto rec = record_annotation(*it->second, rater_id, rate_decomposition, in, out);
    if (!rec) {
      result.remaining = worklist.ids.size() - result.annotated - result.skipped;
      return result;
    }
    append_annotation(file, *rec);
    ++result.annotated;
  }
  out << "\nworklist complete: " << result.annotated << " new, " << result.skipped
      << " already done\n";
  return result;
}

}  // namespace qfts
