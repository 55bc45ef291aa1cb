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
#include <string>
#include <string_view>
#include <vector>

#include "qfts/error.hpp"
#include "qfts/table.hpp"

namespace qfts {

// ---------------------------------------------------------------------------
// Token budgets
//
// The artifact embeds no model tokenizer; budgets are enforced with a cheap
// pluggable estimator. whitespace_words is the default; chars_div_4 is the
// usual characters-per-token rule of thumb.

enum class TokenEstimator { whitespace_words, chars_div_4 };

inline std::size_t estimate_tokens(std::string_view text, TokenEstimator est) {
  if (est == TokenEstimator::chars_div_4) return (text.size() + 3) / 4;
  std::size_t words = 0;
  bool in_word = false;
  for (char c : text) {
    const bool ws = std::isspace(static_cast<unsigned char>(c));
    if (!ws && !in_word) ++words;
    in_word = !ws;
  }
  return words;
}

struct TokenBudget {
  std::size_t max_tokens = 512;
  TokenEstimator estimator = TokenEstimator::whitespace_words;

  // Presets after the context limits of the usual encoder-decoder summarizers.
  static TokenBudget preset_512() { return {512, TokenEstimator::whitespace_words}; }
  static TokenBudget preset_1024() { return {1024, TokenEstimator::whitespace_words}; }

  void validate() const {
    if (max_tokens == 0) throw ConfigError("token budget must be positive");
  }
};

// ---------------------------------------------------------------------------
// Markdown serialization
//
// Pipe-delimited table: header line, separator line of dashes, one line per
// row. Cell text is escaped so parse_markdown is a true inverse:
//   backslash -> \\   pipe -> \|   newline -> \n   carriage return -> \r

inline std::string escape_md_cell(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '|': out += "\\|"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string unescape_md_cell(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      const char n = s[++i];
      if (n == 'n') out += '\n';
      else if (n == 'r') out += '\r';
      else out += n;  // \\ and \| drop the backslash
    } else {
      out += s[i];
    }
  }
  return out;
}

// Byte-for-byte deterministic for equal inputs.
inline std::string to_markdown(const Table& t) {
  const ValidationReport report = validate_table(t);
  if (!report.ok()) throw DataError("to_markdown: invalid table: " + report.describe());
  std::string out;
  auto emit_row = [&out](const std::vector<std::string>& cells) {
    out += "|";
    for (const std::string& c : cells) {
      out += " ";
      out += escape_md_cell(c);
      out += " |";
    }
  };
  emit_row(t.header);
  out += "\n|";
  for (std::size_t j = 0; j < t.header.size(); ++j) out += " --- |";
  for (const auto& row : t.rows) {
    out += "\n";
    emit_row(row);
  }
  return out;
}

namespace detail {

// Splits one pipe-table line into unescaped cells. Escape-aware: a backslash
// consumes the next character, so \| never terminates a cell.
inline std::vector<std::string> parse_md_line(std::string_view line) {
  while (!line.empty() && (line.back() == '\r')) line.remove_suffix(1);
  if (line.size() < 2 || line.front() != '|')
    throw DataError("markdown line must start and end with '|': " + std::string(line));
  std::vector<std::string> fields;
  std::string current;
  bool closed = false;
  for (std::size_t i = 1; i < line.size(); ++i) {
    const char c = line[i];
    if (c == '\\' && i + 1 < line.size()) {
      current += c;
      current += line[++i];
    } else if (c == '|') {
      fields.push_back(current);
      current.clear();
      closed = (i == line.size() - 1);
    } else {
      current += c;
    }
  }
  if (!closed)
    throw DataError("markdown line must start and end with '|': " + std::string(line));
  for (std::string& f : fields) {
    // strip the single padding space added on each side by to_markdown
    if (!f.empty() && f.front() == ' ') f.erase(f.begin());
    if (!f.empty() && f.back() == ' ') f.pop_back();
    f = unescape_md_cell(f);
  }
  return fields;
}

inline bool is_md_separator_cell(std::string_view cell) {
  std::string_view s = cell;
  if (!s.empty() && s.front() == ':') s.remove_prefix(1);
  if (!s.empty() && s.back() == ':') s.remove_suffix(1);
  if (s.empty()) return false;
  for (char c : s)
    if (c != '-') return false;
  return true;
}

}  // namespace detail

// Inverse of to_markdown on its image. The pipe format does not carry id or
// title, so the caller supplies them (defaults keep the Table valid).
inline Table parse_markdown(std::string_view text, std::string id = "markdown",
                            std::string title = "") {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(start, nl - start);
    if (!trim(line).empty()) lines.push_back(line);
    start = nl + 1;
  }
  if (lines.size() < 2) throw DataError("markdown table needs a header and separator line");
  Table t;
  t.id = std::move(id);
  t.title = std::move(title);
  t.header = detail::parse_md_line(lines[0]);
  const std::vector<std::string> sep = detail::parse_md_line(lines[1]);
  if (sep.size() != t.header.size())
    throw DataError("separator line has wrong column count");
  for (const std::string& cell : sep)
    if (!detail::is_md_separator_cell(cell))
      throw DataError("malformed separator cell: '" + cell + "'");
  for (std::size_t i = 2; i < lines.size(); ++i) {
    std::vector<std::string> cells = detail::parse_md_line(lines[i]);
    if (cells.size() != t.header.size())
      throw DataError("ragged markdown row " + std::to_string(i - 2) + ": got " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Flattening
//
// Linearization for sequence-model input. One segment per row, "col: val"
// pairs joined by ", ", segments joined by " ; ", with a leading title
// segment when the table has a title:
//   title: <title> ; col1: v1, col2: v2 ; col1: w1, col2: w2
// Reversible only for cells free of the delimiters; the chosen format string
// is recorded in run reports so outputs stay auditable.

inline constexpr const char* kFlattenStyleName = "title_keyvalue_rows";

enum class FlattenStyle { keyvalue_rows };

inline std::string flatten_table(const Table& t, FlattenStyle = FlattenStyle::keyvalue_rows) {
  const ValidationReport report = validate_table(t);
  if (!report.ok()) throw DataError("flatten_table: invalid table: " + report.describe());
  std::string out;
  bool first_segment = true;
  auto begin_segment = [&] {
    if (!first_segment) out += " ; ";
    first_segment = false;
  };
  if (!t.title.empty()) {
    begin_segment();
    out += "title: ";
    out += t.title;
  }
  for (const auto& row : t.rows) {
    begin_segment();
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j > 0) out += ", ";
      out += t.header[j];
      out += ": ";
      out += row[j];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prompts

struct PromptBundle {
  std::string preamble;       // system-style instruction, may be empty
  std::string body;           // composed prompt text
  std::size_t token_estimate = 0;

  // Single-string form sent over the wire.
  std::string text() const {
    if (preamble.empty()) return body;
    return preamble + "\n\n" + body;
  }
};

// Plain-text templates with {question}, {table_markdown}, {title}, {flattened}
// and {columns} placeholders. Unknown placeholders pass through verbatim.
struct PromptTemplates {
  std::string decomposition_preamble =
      "You analyze tables and select the columns needed to answer a question.";
  std::string decomposition_body =
      "From the table below, list the column names that are relevant to answering the "
      "question. Reply with the relevant column names exactly as they are written in the "
      "header, separated by commas, and nothing else.\n"
      "Available columns: {columns}\n"
      "\n"
      "Question: {question}\n"
      "\n"
      "Table:\n"
      "{table_markdown}\n"
      "\n"
      "Title: {title}";
  std::string summarization_preamble =
      "You write faithful summaries of tabular data.";
  std::string summarization_body =
      "Answer the question with a short natural-language summary of the relevant table "
      "content. Use only facts present in the table data.\n"
      "\n"
      "Question: {question}\n"
      "\n"
      "Table data: {flattened}";

  static const PromptTemplates& defaults() {
    static const PromptTemplates t{};
    return t;
  }
};

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open template file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string render_template(std::string_view tpl,
                                   const std::vector<std::pair<std::string, std::string>>&
                                       values) {
  std::string out(tpl);
  for (const auto& [key, value] : values) {
    const std::string marker = "{" + key + "}";
    std::size_t pos = 0;
    while ((pos = out.find(marker, pos)) != std::string::npos) {
      out.replace(pos, marker.size(), value);
      pos += value.size();
    }
  }
  return out;
}

// Instruction block (with the available-column enumeration), then question,
// then the markdown table, then the title, in that order.
inline PromptBundle build_decomposition_prompt(const Table& table, const std::string& question,
                                               const std::string& title,
                                               const PromptTemplates& templates =
                                                   PromptTemplates::defaults(),
                                               TokenEstimator estimator =
                                                   TokenEstimator::whitespace_words) {
  std::string columns;
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    if (j > 0) columns += ", ";
    columns += table.header[j];
  }
  PromptBundle bundle;
  bundle.preamble = templates.decomposition_preamble;
  bundle.body = render_template(templates.decomposition_body,
                                {{"columns", columns},
                                 {"question", question},
                                 {"table_markdown", to_markdown(table)},
                                 {"title", title}});
  bundle.token_estimate = estimate_tokens(bundle.body, estimator);
  return bundle;
}

inline PromptBundle build_summarization_prompt(const std::string& flattened,
                                               const std::string& question,
                                               const std::string& title,
                                               const PromptTemplates& templates =
                                                   PromptTemplates::defaults(),
                                               TokenEstimator estimator =
                                                   TokenEstimator::whitespace_words) {
  if (flattened.empty()) throw DataError("build_summarization_prompt: empty flattened table");
  PromptBundle bundle;
  bundle.preamble = templates.summarization_preamble;
  bundle.body = render_template(templates.summarization_body, {{"flattened", flattened},
                                                               {"question", question},
                                                               {"title", title}});
  bundle.token_estimate = estimate_tokens(bundle.body, estimator);
  return bundle;
}

// ---------------------------------------------------------------------------
// Truncation

struct TruncateResult {
  std::string text;
  bool truncated = false;
};

// Cuts at the last complete " ; "-separated segment that fits the budget, so
// a "key: value" pair is never split. Truncation is explicit and observable:
// callers record the flag rather than silently shortening input.
inline TruncateResult truncate_to_budget(std::string_view flattened, const TokenBudget& budget) {
  budget.validate();
  if (estimate_tokens(flattened, budget.estimator) <= budget.max_tokens)
    return {std::string(flattened), false};

  std::vector<std::string_view> segments;
  std::size_t start = 0;
  while (true) {
    const std::size_t sep = flattened.find(" ; ", start);
    if (sep == std::string_view::npos) {
      segments.push_back(flattened.substr(start));
      break;
    }
    segments.push_back(flattened.substr(start, sep - start));
    start = sep + 3;
  }

  std::string acc;
  for (std::string_view seg : segments) {
    std::string candidate = acc.empty() ? std::string(seg) : acc + " ; " + std::string(seg);
    if (estimate_tokens(candidate, budget.estimator) > budget.max_tokens) break;
    acc = std::move(candidate);
  }
  if (acc.empty())
    throw DataError("token budget of " + std::to_string(budget.max_tokens) +
                    " cannot fit the leading table segment");
  return {std::move(acc), true};
}

}  // namespace qfts
