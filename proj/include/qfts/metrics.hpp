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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "qfts/error.hpp"
#include "qfts/table.hpp"

namespace qfts {

// ---------------------------------------------------------------------------
// Tokenization
//
// One normalizer function serves every metric; the mode is a run-level
// setting recorded in reports, applied identically to candidates, references,
// and table lexicons so scores stay comparable across metrics.
//
//   punct_split: lowercase, punctuation split off as single-char tokens
//   whitespace:  lowercase, split on whitespace only (punctuation stays glued)
//   alnum:       lowercase, punctuation stripped entirely
//
// whitespace is the shipped default for metric scoring; see the README notes
// on scoring parameters. Bytes >= 0x80 are treated as word characters so
// UTF-8 sequences never get split mid-character.

enum class NormalizerMode { punct_split, whitespace, alnum };

inline std::string to_string(NormalizerMode m) {
  switch (m) {
    case NormalizerMode::punct_split: return "punct_split";
    case NormalizerMode::whitespace: return "whitespace";
    case NormalizerMode::alnum: return "alnum";
  }
  return "unknown";
}

inline NormalizerMode normalizer_mode_from_string(const std::string& s) {
  if (s == "punct_split") return NormalizerMode::punct_split;
  if (s == "whitespace") return NormalizerMode::whitespace;
  if (s == "alnum") return NormalizerMode::alnum;
  throw ConfigError("unknown normalizer mode: " + s);
}

struct TokenSequence {
  std::vector<std::string> tokens;

  bool empty() const { return tokens.empty(); }
  std::size_t size() const { return tokens.size(); }
  bool operator==(const TokenSequence&) const = default;
};

inline TokenSequence tokenize(std::string_view text,
                              NormalizerMode mode = NormalizerMode::punct_split) {
  TokenSequence seq;
  auto is_word_char = [](unsigned char c) {
    return c >= 0x80 || std::isalnum(c) != 0;
  };
  auto lower = [](unsigned char c) -> char {
    return c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c);
  };
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      seq.tokens.push_back(current);
      current.clear();
    }
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
      continue;
    }
    switch (mode) {
      case NormalizerMode::whitespace:
        current += lower(c);
        break;
      case NormalizerMode::alnum:
        if (is_word_char(c)) current += lower(c);
        else flush();
        break;
      case NormalizerMode::punct_split:
        if (is_word_char(c)) {
          current += lower(c);
        } else {
          flush();
          seq.tokens.push_back(std::string(1, static_cast<char>(c)));
        }
        break;
    }
  }
  flush();
  return seq;
}

inline std::string join_tokens(const TokenSequence& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    if (i > 0) out += ' ';
    out += seq.tokens[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// n-gram counting

namespace detail {

// n-gram key: tokens joined on an unprintable separator.
inline std::unordered_map<std::string, std::size_t> ngram_counts(const TokenSequence& seq,
                                                                 std::size_t n) {
  std::unordered_map<std::string, std::size_t> counts;
  if (n == 0 || seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    std::string key;
    for (std::size_t j = 0; j < n; ++j) {
      if (j > 0) key += '\x1f';
      key += seq.tokens[i + j];
    }
    ++counts[key];
  }
  return counts;
}

inline std::size_t total_count(const std::unordered_map<std::string, std::size_t>& m) {
  std::size_t t = 0;
  for (const auto& [k, v] : m) t += v;
  return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// BLEU

// Sentence-level BLEU: geometric mean of modified (clipped) n-gram precisions
// for n = 1..max_n, times the brevity penalty. Orders the candidate is too
// short to populate are skipped. A zero count at order 1 yields 0; zero
// counts at higher orders are smoothed as epsilon inside the log.
inline constexpr double kBleuEpsilon = 1e-9;

namespace detail {

struct BleuCounts {
  std::vector<std::size_t> clipped;  // per order, 0-indexed
  std::vector<std::size_t> total;
  std::size_t candidate_len = 0;
  std::size_t reference_len = 0;  // closest reference length
};

inline BleuCounts bleu_counts(const TokenSequence& candidate,
                              const std::vector<TokenSequence>& references, int max_n) {
  BleuCounts c;
  c.clipped.assign(max_n, 0);
  c.total.assign(max_n, 0);
  c.candidate_len = candidate.size();
  std::size_t best_ref = references.front().size();
  for (const TokenSequence& r : references) {
    const auto diff = [&](std::size_t len) {
      return len > c.candidate_len ? len - c.candidate_len : c.candidate_len - len;
    };
    if (diff(r.size()) < diff(best_ref) || (diff(r.size()) == diff(best_ref) && r.size() < best_ref))
      best_ref = r.size();
  }
  c.reference_len = best_ref;
  for (int n = 1; n <= max_n; ++n) {
    const auto cand = ngram_counts(candidate, n);
    if (cand.empty()) continue;
    std::unordered_map<std::string, std::size_t> max_ref;
    for (const TokenSequence& r : references)
      for (const auto& [g, cnt] : ngram_counts(r, n)) {
        auto& slot = max_ref[g];
        slot = std::max(slot, cnt);
      }
    for (const auto& [g, cnt] : cand) {
      c.total[n - 1] += cnt;
      const auto it = max_ref.find(g);
      if (it != max_ref.end()) c.clipped[n - 1] += std::min(cnt, it->second);
    }
  }
  return c;
}

inline double bleu_from_counts(const BleuCounts& c, int max_n) {
  if (c.total[0] == 0) return 0.0;
  if (c.clipped[0] == 0) return 0.0;  // nothing overlaps at all
  double log_sum = 0.0;
  int orders = 0;
  for (int n = 1; n <= max_n; ++n) {
    if (c.total[n - 1] == 0) continue;  // candidate shorter than n
    const double p =
        static_cast<double>(c.clipped[n - 1]) / static_cast<double>(c.total[n - 1]);
    log_sum += std::log(p > 0.0 ? p : kBleuEpsilon);
    ++orders;
  }
  const double geo = std::exp(log_sum / orders);
  double bp = 1.0;
  if (c.candidate_len < c.reference_len)
    bp = std::exp(1.0 - static_cast<double>(c.reference_len) /
                            static_cast<double>(c.candidate_len));
  return std::min(1.0, bp * geo);
}

}  // namespace detail

inline double bleu(const TokenSequence& candidate, const std::vector<TokenSequence>& references,
                   int max_n = 4) {
  if (candidate.empty()) throw MetricError("bleu: empty candidate");
  if (references.empty()) throw MetricError("bleu: no references");
  for (const TokenSequence& r : references)
    if (r.empty()) throw MetricError("bleu: empty reference");
  if (max_n < 1) throw MetricError("bleu: max_n must be >= 1");
  return detail::bleu_from_counts(detail::bleu_counts(candidate, references, max_n), max_n);
}

// Corpus-level BLEU over pooled counts (the classic corpus statistic). Both
// this and the sentence-mean variant are reported, labeled.
inline double corpus_bleu(
    const std::vector<std::pair<TokenSequence, std::vector<TokenSequence>>>& pairs,
    int max_n = 4) {
  if (pairs.empty()) throw MetricError("corpus_bleu: empty corpus");
  detail::BleuCounts pooled;
  pooled.clipped.assign(max_n, 0);
  pooled.total.assign(max_n, 0);
  pooled.candidate_len = 0;
  pooled.reference_len = 0;
  for (const auto& [cand, refs] : pairs) {
    if (cand.empty()) throw MetricError("corpus_bleu: empty candidate");
    if (refs.empty()) throw MetricError("corpus_bleu: no references");
    for (const TokenSequence& r : refs)
      if (r.empty()) throw MetricError("corpus_bleu: empty reference");
    const detail::BleuCounts c = detail::bleu_counts(cand, refs, max_n);
    for (int n = 0; n < max_n; ++n) {
      pooled.clipped[n] += c.clipped[n];
      pooled.total[n] += c.total[n];
    }
    pooled.candidate_len += c.candidate_len;
    pooled.reference_len += c.reference_len;
  }
  return detail::bleu_from_counts(pooled, max_n);
}

// ---------------------------------------------------------------------------
// ROUGE

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;

  bool operator==(const Prf&) const = default;
};

namespace detail {

inline double f1(double p, double r) {
  return (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

}  // namespace detail

// Clipped n-gram overlap. Recall over reference n-grams, precision over
// candidate n-grams. A side too short to hold any n-gram scores zero without
// raising.
inline Prf rouge_n(const TokenSequence& candidate, const TokenSequence& reference,
                   std::size_t n) {
  if (n < 1) throw MetricError("rouge_n: n must be >= 1");
  if (reference.empty()) throw MetricError("rouge_n: empty reference");
  const auto cand = detail::ngram_counts(candidate, n);
  const auto ref = detail::ngram_counts(reference, n);
  std::size_t overlap = 0;
  for (const auto& [g, cnt] : cand) {
    const auto it = ref.find(g);
    if (it != ref.end()) overlap += std::min(cnt, it->second);
  }
  const std::size_t cand_total = detail::total_count(cand);
  const std::size_t ref_total = detail::total_count(ref);
  Prf out;
  out.precision = cand_total > 0 ? static_cast<double>(overlap) / cand_total : 0.0;
  out.recall = ref_total > 0 ? static_cast<double>(overlap) / ref_total : 0.0;
  out.f = detail::f1(out.precision, out.recall);
  return out;
}

namespace detail {

inline std::size_t lcs_length(const std::vector<std::string>& a,
                              const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1]) cur[j] = prev[j - 1] + 1;
      else cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace detail

// Longest-common-subsequence F with beta = 1 (the beta is stated in every
// report header, since the historical definition weights recall higher).
inline Prf rouge_l(const TokenSequence& candidate, const TokenSequence& reference) {
  if (reference.empty()) throw MetricError("rouge_l: empty reference");
  const std::size_t lcs = detail::lcs_length(candidate.tokens, reference.tokens);
  Prf out;
  out.precision = candidate.empty() ? 0.0 : static_cast<double>(lcs) / candidate.size();
  out.recall = static_cast<double>(lcs) / reference.size();
  out.f = detail::f1(out.precision, out.recall);
  return out;
}

// ---------------------------------------------------------------------------
// PARENT (word-overlap entailment variant)
//
// Grounds both sides in the table. The table lexicon is the set of normalized
// tokens from every header name and cell. The entailment weight of an n-gram
// is the fraction of its tokens found in the lexicon.
//
//   precision: geometric mean over n = 1..max_n of the mean entailment
//              weight of candidate n-grams
//   recall:    R_ref^(1-lambda) * R_tab^lambda, where R_ref is the geometric
//              mean of clipped n-gram recall against the reference and R_tab
//              is the fraction of reference tokens present in the lexicon
//   f:         harmonic mean
//
// lambda trades reference fidelity against table grounding; 0.5 by default,
// recorded in reports.

struct ParentParams {
  double lambda = 0.5;
  int max_n = 4;
  NormalizerMode normalizer = NormalizerMode::whitespace;
};

namespace detail {

inline std::unordered_map<std::string, bool> table_lexicon(const Table& table,
                                                           NormalizerMode mode) {
  std::unordered_map<std::string, bool> lex;
  auto add = [&](const std::string& text) {
    for (const std::string& tok : tokenize(text, mode).tokens) lex[tok] = true;
  };
  for (const std::string& h : table.header) add(h);
  for (const auto& row : table.rows)
    for (const std::string& c : row) add(c);
  return lex;
}

}  // namespace detail

inline Prf parent(const TokenSequence& candidate, const TokenSequence& reference,
                  const Table& table, const ParentParams& params = {}) {
  if (reference.empty()) throw MetricError("parent: empty reference");
  if (params.lambda < 0.0 || params.lambda > 1.0)
    throw MetricError("parent: lambda must be in [0,1]");
  const auto lexicon = detail::table_lexicon(table, params.normalizer);
  if (lexicon.empty()) throw MetricError("parent: empty table lexicon");
  auto in_lexicon = [&](const std::string& tok) { return lexicon.count(tok) > 0; };

  // Entailment weight of an n-gram key (tokens joined on \x1f).
  auto weight = [&](const std::string& key) {
    std::size_t total = 0, hit = 0;
    std::size_t start = 0;
    while (start <= key.size()) {
      std::size_t sep = key.find('\x1f', start);
      if (sep == std::string::npos) sep = key.size();
      ++total;
      if (in_lexicon(key.substr(start, sep - start))) ++hit;
      start = sep + 1;
    }
    return total > 0 ? static_cast<double>(hit) / total : 0.0;
  };

  // Entailed precision.
  double precision = 0.0;
  if (!candidate.empty()) {
    double log_sum = 0.0;
    int orders = 0;
    bool zero_order = false;
    for (int n = 1; n <= params.max_n; ++n) {
      const auto cand = detail::ngram_counts(candidate, n);
      if (cand.empty()) continue;
      double weighted = 0.0;
      std::size_t total = 0;
      for (const auto& [g, cnt] : cand) {
        weighted += weight(g) * cnt;
        total += cnt;
      }
      const double ep = weighted / total;
      if (ep <= 0.0) {
        zero_order = true;
        break;
      }
      log_sum += std::log(ep);
      ++orders;
    }
    precision = (zero_order || orders == 0) ? 0.0 : std::exp(log_sum / orders);
  }

  // Reference-overlap recall (clipped n-grams, geometric over orders).
  double r_ref = 0.0;
  {
    double log_sum = 0.0;
    int orders = 0;
    bool zero_order = false;
    for (int n = 1; n <= params.max_n; ++n) {
      const auto ref = detail::ngram_counts(reference, n);
      if (ref.empty()) continue;
      const auto cand = detail::ngram_counts(candidate, n);
      std::size_t overlap = 0;
      for (const auto& [g, cnt] : ref) {
        const auto it = cand.find(g);
        if (it != cand.end()) overlap += std::min(cnt, it->second);
      }
      const double r = static_cast<double>(overlap) / detail::total_count(ref);
      if (r <= 0.0) {
        zero_order = true;
        break;
      }
      log_sum += std::log(r);
      ++orders;
    }
    r_ref = (zero_order || orders == 0) ? 0.0 : std::exp(log_sum / orders);
  }

  // Table recall: how much of the reference is table-grounded.
  double r_tab = 0.0;
  {
    std::size_t hit = 0;
    for (const std::string& tok : reference.tokens)
      if (in_lexicon(tok)) ++hit;
    r_tab = static_cast<double>(hit) / reference.size();
  }

  Prf out;
  out.precision = precision;
  if (r_ref == 0.0 && params.lambda < 1.0) out.recall = 0.0;
  else if (r_tab == 0.0 && params.lambda > 0.0) out.recall = 0.0;
  else out.recall = std::pow(r_ref, 1.0 - params.lambda) * std::pow(r_tab, params.lambda);
  out.f = detail::f1(out.precision, out.recall);
  return out;
}

// ---------------------------------------------------------------------------
// ICC (two-way random effects, consistency with the standard ANOVA forms)

struct RatingMatrix {
  std::size_t subjects = 0;
  std::size_t raters = 0;
  std::vector<double> data;  // row-major, subjects x raters

  double at(std::size_t subject, std::size_t rater) const {
    return data[subject * raters + rater];
  }

  void validate() const {
    if (subjects < 2) throw DataError("rating matrix needs at least 2 subjects");
    if (raters < 2) throw DataError("rating matrix needs at least 2 raters");
    if (data.size() != subjects * raters)
      throw DataError("rating matrix has missing cells");
    for (double v : data) {
      if (!std::isfinite(v) || v < 1.0 || v > 5.0)
        throw DataError("rating outside the 1..5 scale");
    }
  }
};

enum class IccForm { two_way_random_single, two_way_random_average };

inline std::string to_string(IccForm f) {
  return f == IccForm::two_way_random_single ? "two_way_random_single"
                                             : "two_way_random_average";
}

// Two-way ANOVA mean squares -> ICC(2,1) or ICC(2,k). Result clamped to
// [-1, 1]. All-identical ratings leave the coefficient undefined.
inline double icc(const RatingMatrix& m, IccForm form) {
  m.validate();
  const double n = static_cast<double>(m.subjects);
  const double k = static_cast<double>(m.raters);
  double grand = 0.0;
  for (double v : m.data) grand += v;
  grand /= (n * k);

  double ss_total = 0.0;
  for (double v : m.data) ss_total += (v - grand) * (v - grand);
  if (ss_total < 1e-12)
    throw MetricError("icc: undefined for zero total variance (all ratings identical)");

  double ss_rows = 0.0;
  for (std::size_t i = 0; i < m.subjects; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < m.raters; ++j) mean += m.at(i, j);
    mean /= k;
    ss_rows += (mean - grand) * (mean - grand);
  }
  ss_rows *= k;

  double ss_cols = 0.0;
  for (std::size_t j = 0; j < m.raters; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < m.subjects; ++i) mean += m.at(i, j);
    mean /= n;
    ss_cols += (mean - grand) * (mean - grand);
  }
  ss_cols *= n;

  const double ss_err = ss_total - ss_rows - ss_cols;
  const double msr = ss_rows / (n - 1.0);
  const double msc = ss_cols / (k - 1.0);
  const double mse = std::max(0.0, ss_err) / ((n - 1.0) * (k - 1.0));

  double value = 0.0;
  if (form == IccForm::two_way_random_single) {
    const double denom = msr + (k - 1.0) * mse + (k / n) * (msc - mse);
    if (std::abs(denom) < 1e-15) throw MetricError("icc: degenerate denominator");
    value = (msr - mse) / denom;
  } else {
    const double denom = msr + (msc - mse) / n;
    if (std::abs(denom) < 1e-15) throw MetricError("icc: degenerate denominator");
    value = (msr - mse) / denom;
  }
  return std::clamp(value, -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Reports and aggregation

struct MetricReport {
  double bleu = 0.0;
  Prf rouge1;
  Prf rouge2;
  Prf rougeL;
  std::optional<Prf> parent;  // absent when no table was available

  bool operator==(const MetricReport&) const = default;
};

struct AggregateReport {
  MetricReport mean;
  std::size_t count = 0;
  std::size_t parent_count = 0;               // examples that had a table
  std::optional<double> corpus_bleu;          // pooled-count variant, labeled

  bool operator==(const AggregateReport&) const = default;
};

// Componentwise arithmetic mean. PARENT averages over the reports that carry
// it; the counts make the denominator visible.
inline AggregateReport aggregate(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw MetricError("aggregate: empty report list");
  AggregateReport agg;
  agg.count = reports.size();
  Prf parent_sum;
  auto add = [](Prf& acc, const Prf& x) {
    acc.precision += x.precision;
    acc.recall += x.recall;
    acc.f += x.f;
  };
  for (const MetricReport& r : reports) {
    agg.mean.bleu += r.bleu;
    add(agg.mean.rouge1, r.rouge1);
    add(agg.mean.rouge2, r.rouge2);
    add(agg.mean.rougeL, r.rougeL);
    if (r.parent) {
      add(parent_sum, *r.parent);
      ++agg.parent_count;
    }
  }
  auto scale = [](Prf& p, double d) {
    p.precision /= d;
    p.recall /= d;
    p.f /= d;
  };
  const double d = static_cast<double>(agg.count);
  agg.mean.bleu /= d;
  scale(agg.mean.rouge1, d);
  scale(agg.mean.rouge2, d);
  scale(agg.mean.rougeL, d);
  if (agg.parent_count > 0) {
    scale(parent_sum, static_cast<double>(agg.parent_count));
    agg.mean.parent = parent_sum;
  }
  return agg;
}

// Run-level scoring settings; serialized into every report.
struct MetricsConfig {
  NormalizerMode normalizer = NormalizerMode::whitespace;
  int bleu_max_n = 4;
  double parent_lambda = 0.5;
};

// Scores one candidate against one reference (and optionally the source
// table) under a single shared normalizer.
inline MetricReport score_example(const std::string& candidate_text,
                                  const std::string& reference_text, const Table* table,
                                  const MetricsConfig& cfg = {}) {
  const TokenSequence cand = tokenize(candidate_text, cfg.normalizer);
  const TokenSequence ref = tokenize(reference_text, cfg.normalizer);
  if (cand.empty()) throw MetricError("score_example: candidate has no tokens");
  if (ref.empty()) throw MetricError("score_example: reference has no tokens");
  MetricReport r;
  r.bleu = bleu(cand, {ref}, cfg.bleu_max_n);
  r.rouge1 = rouge_n(cand, ref, 1);
  r.rouge2 = rouge_n(cand, ref, 2);
  r.rougeL = rouge_l(cand, ref);
  if (table != nullptr) {
    ParentParams p;
    p.lambda = cfg.parent_lambda;
    p.normalizer = cfg.normalizer;
    r.parent = parent(cand, ref, *table, p);
  }
  return r;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(json& j, const Prf& p) {
  j = json{{"precision", p.precision}, {"recall", p.recall}, {"f", p.f}};
}

inline void from_json(const json& j, Prf& p) {
  j.at("precision").get_to(p.precision);
  j.at("recall").get_to(p.recall);
  j.at("f").get_to(p.f);
}

inline void to_json(json& j, const MetricReport& r) {
  j = json{{"bleu", r.bleu}, {"rouge1", r.rouge1}, {"rouge2", r.rouge2}, {"rougeL", r.rougeL}};
  if (r.parent) j["parent"] = *r.parent;
  else j["parent"] = nullptr;
}

inline void from_json(const json& j, MetricReport& r) {
  j.at("bleu").get_to(r.bleu);
  j.at("rouge1").get_to(r.rouge1);
  j.at("rouge2").get_to(r.rouge2);
  j.at("rougeL").get_to(r.rougeL);
  if (j.contains("parent") && !j["parent"].is_null()) r.parent = j["parent"].get<Prf>();
  else r.parent = std::nullopt;
}

inline void to_json(json& j, const AggregateReport& a) {
  j = json{{"mean", a.mean},
           {"count", a.count},
           {"parent_count", a.parent_count}};
  if (a.corpus_bleu) j["corpus_bleu"] = *a.corpus_bleu;
  else j["corpus_bleu"] = nullptr;
}

inline void from_json(const json& j, AggregateReport& a) {
  j.at("mean").get_to(a.mean);
  j.at("count").get_to(a.count);
  j.at("parent_count").get_to(a.parent_count);
  if (j.contains("corpus_bleu") && !j["corpus_bleu"].is_null())
    a.corpus_bleu = j["corpus_bleu"].get<double>();
  else
    a.corpus_bleu = std::nullopt;
}

}  // namespace qfts
