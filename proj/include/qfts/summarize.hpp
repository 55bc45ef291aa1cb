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

#include <optional>
#include <string>

#include "qfts/decompose.hpp"
#include "qfts/error.hpp"
#include "qfts/llm_client.hpp"
#include "qfts/serialize.hpp"
#include "qfts/table.hpp"

namespace qfts {

// The two experiment arms: summarize the table as loaded, or the
// query-reduced version of it.
enum class Mode { original, decomposed };

inline std::string to_string(Mode m) {
  return m == Mode::original ? "original" : "decomposed";
}

inline Mode mode_from_string(const std::string& s) {
  if (s == "original") return Mode::original;
  if (s == "decomposed") return Mode::decomposed;
  throw ConfigError("unknown mode: " + s + " (expected original or decomposed)");
}

struct SummaryResult {
  std::string example_id;
  Mode mode = Mode::original;
  std::string summary_text;
  bool truncated_input = false;
  std::optional<DecompositionResult> decomposition;  // present iff mode == decomposed
  std::string summarizer_fingerprint;
  std::size_t prompt_token_estimate = 0;
};

// Produces the query-focused summary for one example. The decomposed arm runs
// the decomposer first, then flatten -> truncate -> prompt -> complete; the
// original arm skips decomposition. Zero-shot: the prompt carries the table
// and the question, nothing else.
inline SummaryResult summarize_example(const QtExample& example, Mode mode,
                                       const TokenBudget& budget,
                                       CompletionClient* decomposer,
                                       CompletionClient& summarizer,
                                       const PromptTemplates& templates =
                                           PromptTemplates::defaults()) {
  budget.validate();
  SummaryResult result;
  result.example_id = example.example_id;
  result.mode = mode;

  const Table* input_table = &example.table;
  if (mode == Mode::decomposed) {
    if (decomposer == nullptr)
      throw ConfigError("decomposed mode requires a decomposer client");
    result.decomposition = decompose(example, *decomposer, templates, budget.estimator);
    input_table = &result.decomposition->decomposed;
  }

  const std::string flattened = flatten_table(*input_table);
  const TruncateResult fitted = truncate_to_budget(flattened, budget);
  result.truncated_input = fitted.truncated;

  const PromptBundle prompt = build_summarization_prompt(
      fitted.text, example.query, example.table.title, templates, budget.estimator);
  result.prompt_token_estimate = prompt.token_estimate;

  LlmResponse response;
  try {
    response = summarizer.complete_prompt(prompt.text(), Purpose::summarize);
  } catch (const Error& e) {
    throw Error("example " + example.example_id + ": " + e.what());
  }
  if (response.text.empty())
    throw DataError("example " + example.example_id + ": summarizer returned empty text");
  result.summary_text = response.text;
  result.summarizer_fingerprint = response.request_fingerprint;
  return result;
}

}  // namespace qfts
