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
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "qfts/error.hpp"
#include "qfts/llm_client.hpp"
#include "qfts/metrics.hpp"
#include "qfts/serialize.hpp"
#include "qfts/table.hpp"

namespace qfts {

// Outcome of reducing one table to its query-relevant columns.
struct DecompositionResult {
  std::string source_table_id;
  std::vector<std::string> selected_columns;  // header names, source order
  std::string raw_model_output;               // persisted verbatim for later review
  bool fallback_used = false;                 // no column matched; all kept
  Table decomposed;
  std::string request_fingerprint;            // empty when built without a model call

  bool operator==(const DecompositionResult&) const = default;
};

namespace detail {

struct HeaderPattern {
  std::vector<std::string> tokens;  // normalized name tokens
  std::vector<std::size_t> columns; // every column position bearing this name
  std::size_t char_length = 0;
  std::size_t first_column = 0;
};

}  // namespace detail

// Column-relevance matching over free-form model output.
//
// Policy: case-insensitive whole-token phrase containment. Header names are
// normalized to token sequences (punctuation kept as tokens, so one-character
// and punctuation-only names still match only as whole tokens). Longer names
// claim their occurrences first, so "Date" does not fire when the output only
// mentions "Date of Birth". Duplicate header names match positionally: every
// column bearing a matched name is kept.
inline std::vector<std::size_t> extract_relevant_column_indices(std::string_view output_text,
                                                                const Table& table) {
  const TokenSequence out_seq = tokenize(output_text, NormalizerMode::punct_split);
  const std::vector<std::string>& out = out_seq.tokens;

  std::unordered_map<std::string, detail::HeaderPattern> patterns;
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    const TokenSequence toks = tokenize(table.header[j], NormalizerMode::punct_split);
    std::string key;
    for (const std::string& t : toks.tokens) {
      key += t;
      key += '\x1f';
    }
    auto [it, inserted] = patterns.try_emplace(key);
    detail::HeaderPattern& p = it->second;
    if (inserted) {
      p.tokens = toks.tokens;
      p.char_length = table.header[j].size();
      p.first_column = j;
    }
    p.columns.push_back(j);
  }

  std::vector<const detail::HeaderPattern*> order;
  order.reserve(patterns.size());
  for (const auto& [key, p] : patterns) order.push_back(&p);
  std::sort(order.begin(), order.end(),
            [](const detail::HeaderPattern* a, const detail::HeaderPattern* b) {
              if (a->tokens.size() != b->tokens.size())
                return a->tokens.size() > b->tokens.size();
              if (a->char_length != b->char_length) return a->char_length > b->char_length;
              return a->first_column < b->first_column;
            });

  std::vector<bool> claimed(out.size(), false);
  std::vector<std::size_t> selected;
  for (const detail::HeaderPattern* p : order) {
    const std::size_t len = p->tokens.size();
    if (len == 0 || len > out.size()) continue;
    bool matched = false;
    for (std::size_t i = 0; i + len <= out.size();) {
      bool hit = true;
      for (std::size_t k = 0; k < len; ++k) {
        if (claimed[i + k] || out[i + k] != p->tokens[k]) {
          hit = false;
          break;
        }
      }
      if (hit) {
        matched = true;
        for (std::size_t k = 0; k < len; ++k) claimed[i + k] = true;
        i += len;
      } else {
        ++i;
      }
    }
    if (matched)
      selected.insert(selected.end(), p->columns.begin(), p->columns.end());
  }
  std::sort(selected.begin(), selected.end());
  return selected;
}

// Header names matched in output_text, in header order; empty when none match.
inline std::vector<std::string> extract_relevant_columns(std::string_view output_text,
                                                         const Table& table) {
  std::vector<std::string> names;
  for (std::size_t j : extract_relevant_column_indices(output_text, table))
    names.push_back(table.header[j]);
  return names;
}

// Builds the decomposed table from the model's judgment. Total on every
// input: when no column matches, all columns are kept and the fallback flag
// is set. Rows are never removed; id and title carry over from the source.
inline DecompositionResult create_decomposed_table(const Table& table,
                                                   std::string_view output_text) {
  const ValidationReport report = validate_table(table);
  if (!report.ok())
    throw DataError("create_decomposed_table: invalid table: " + report.describe());
  std::vector<std::size_t> idx = extract_relevant_column_indices(output_text, table);
  DecompositionResult result;
  result.source_table_id = table.id;
  result.raw_model_output = std::string(output_text);
  result.fallback_used = idx.empty();
  if (result.fallback_used) {
    idx.resize(table.header.size());
    for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = j;
  }
  Table& d = result.decomposed;
  d.id = table.id;
  d.title = table.title;
  for (std::size_t j : idx) {
    d.header.push_back(table.header[j]);
    result.selected_columns.push_back(table.header[j]);
  }
  d.rows.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    std::vector<std::string> cells;
    cells.reserve(idx.size());
    for (std::size_t j : idx) cells.push_back(row[j]);
    d.rows.push_back(std::move(cells));
  }
  return result;
}

// Full decomposition pass for one example: prompt the decomposer model, then
// project the table by its answer. Client errors propagate with the example
// id attached so batch logs stay readable.
inline DecompositionResult decompose(const QtExample& example, CompletionClient& client,
                                     const PromptTemplates& templates =
                                         PromptTemplates::defaults(),
                                     TokenEstimator estimator =
                                         TokenEstimator::whitespace_words) {
  const PromptBundle bundle = build_decomposition_prompt(
      example.table, example.query, example.table.title, templates, estimator);
  LlmResponse response;
  try {
    response = client.complete_prompt(bundle.text(), Purpose::decompose);
  } catch (const Error& e) {
    throw Error("example " + example.example_id + ": " + e.what());
  }
  DecompositionResult result = create_decomposed_table(example.table, response.text);
  result.request_fingerprint = response.request_fingerprint;
  return result;
}

inline void to_json(json& j, const DecompositionResult& r) {
  j = json{{"table_id", r.source_table_id},
           {"selected_columns", r.selected_columns},
           {"fallback_used", r.fallback_used},
           {"raw_model_output", r.raw_model_output},
           {"request_fingerprint", r.request_fingerprint}};
}

}  // namespace qfts
