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

#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "qfts/error.hpp"
#include "qfts/sampling.hpp"

namespace qfts {

using json = nlohmann::json;

// A rectangular grid of cell strings. Cells carry no numeric typing; the
// pipeline treats table content as text end to end.
struct Table {
  std::string id;
  std::string title;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  bool operator==(const Table&) const = default;
};

// One dataset record: a table, the user question about it, and (when labeled)
// the reference summary. reference_summary is absent in inference-only data.
struct QtExample {
  std::string example_id;
  Table table;
  std::string query;
  std::optional<std::string> reference_summary;

  bool operator==(const QtExample&) const = default;
};

struct DatasetSplit {
  std::string name;  // train, validation, test, or a caller-chosen label
  std::vector<QtExample> examples;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Validation

struct Violation {
  std::string code;
  std::string message;
  std::optional<std::size_t> row;
  std::optional<std::size_t> column;
};

struct ValidationReport {
  std::vector<Violation> violations;  // invariant breaks; table unusable
  std::vector<Violation> warnings;    // flagged but tolerated (duplicate column names)

  bool ok() const { return violations.empty(); }

  std::string describe() const {
    std::ostringstream os;
    for (const auto& v : violations) os << v.code << ": " << v.message << "; ";
    return os.str();
  }
};

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

// Reports every invariant violation with coordinates. Never mutates the input;
// violations are data, not failures.
inline ValidationReport validate_table(const Table& t) {
  ValidationReport report;
  if (t.id.empty())
    report.violations.push_back({"empty_id", "table id is empty", {}, {}});
  if (t.header.empty())
    report.violations.push_back({"empty_header", "table has no columns", {}, {}});
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    if (trim(t.header[j]).empty())
      report.violations.push_back(
          {"empty_header_name", "header name at column " + std::to_string(j) + " is empty",
           {}, j});
  }
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (t.rows[i].size() != t.header.size()) {
      report.violations.push_back(
          {"ragged_row",
           "row " + std::to_string(i) + " has " + std::to_string(t.rows[i].size()) +
               " cells, expected " + std::to_string(t.header.size()),
           i, {}});
    }
  }
  std::unordered_set<std::string> seen;
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    if (!seen.insert(t.header[j]).second)
      report.warnings.push_back(
          {"duplicate_column_name", "column name '" + t.header[j] + "' repeats", {}, j});
  }
  return report;
}

// ---------------------------------------------------------------------------
// Dataset loading

enum class SchemaMode { strict, lenient };

// Field names in the on-disk record schema. Overridable so upstream naming
// drift can be adapted from config instead of preprocessing files.
struct FieldMap {
  std::string example_id = "example_id";
  std::string query = "query";
  std::string summary = "summary";
  std::string table = "table";
  std::string table_id = "id";
  std::string table_title = "title";
  std::string table_header = "header";
  std::string table_rows = "rows";
};

struct LoadResult {
  std::vector<QtExample> examples;
  std::size_t skipped = 0;            // lenient mode: records dropped
  std::vector<std::string> issues;    // one human-readable line per drop
};

namespace detail {

inline std::string cell_to_string(const json& v, SchemaMode mode) {
  if (v.is_string()) return v.get<std::string>();
  if (mode == SchemaMode::strict) throw DataError("cell is not a string");
  if (v.is_null()) return "";
  return v.dump();  // numbers and booleans keep their literal text
}

inline QtExample parse_example(const json& rec, const FieldMap& f, SchemaMode mode) {
  if (!rec.is_object()) throw DataError("record is not an object");
  QtExample ex;
  if (!rec.contains(f.example_id) || !rec[f.example_id].is_string())
    throw DataError("missing or non-string field '" + f.example_id + "'");
  ex.example_id = rec[f.example_id].get<std::string>();
  if (ex.example_id.empty()) throw DataError("empty example_id");
  if (!rec.contains(f.query) || !rec[f.query].is_string())
    throw DataError("missing or non-string field '" + f.query + "'");
  ex.query = rec[f.query].get<std::string>();
  if (trim(ex.query).empty()) throw DataError("empty query");
  if (rec.contains(f.summary) && rec[f.summary].is_string()) {
    std::string s = rec[f.summary].get<std::string>();
    if (!trim(s).empty()) ex.reference_summary = std::move(s);
  }
  if (!rec.contains(f.table) || !rec[f.table].is_object())
    throw DataError("missing or non-object field '" + f.table + "'");
  const json& tj = rec[f.table];
  Table& t = ex.table;
  if (tj.contains(f.table_id) && tj[f.table_id].is_string())
    t.id = tj[f.table_id].get<std::string>();
  if (t.id.empty()) {
    if (mode == SchemaMode::strict) throw DataError("missing table id");
    t.id = ex.example_id + "::table";
  }
  if (tj.contains(f.table_title) && tj[f.table_title].is_string())
    t.title = tj[f.table_title].get<std::string>();
  if (!tj.contains(f.table_header) || !tj[f.table_header].is_array())
    throw DataError("missing or non-array table field '" + f.table_header + "'");
  for (const json& h : tj[f.table_header]) t.header.push_back(trim(cell_to_string(h, mode)));
  if (!tj.contains(f.table_rows) || !tj[f.table_rows].is_array())
    throw DataError("missing or non-array table field '" + f.table_rows + "'");
  for (const json& row : tj[f.table_rows]) {
    if (!row.is_array()) throw DataError("table row is not an array");
    std::vector<std::string> cells;
    for (const json& c : row) cells.push_back(cell_to_string(c, mode));
    t.rows.push_back(std::move(cells));
  }
  const ValidationReport report = validate_table(t);
  if (!report.ok()) throw DataError("invalid table: " + report.describe());
  return ex;
}

}  // namespace detail

// Loads newline-delimited records or one top-level array of records.
// Lenient mode skips and counts records that fail validation; strict mode
// aborts on the first failure.
inline LoadResult load_dataset(const std::filesystem::path& path, SchemaMode mode,
                               const FieldMap& fields = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  std::vector<std::pair<std::string, json>> raw;  // (where, record)
  std::size_t first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) throw DataError("dataset file is empty: " + path.string());
  if (text[first] == '[') {
    json arr;
    try {
      arr = json::parse(text);
    } catch (const json::exception& e) {
      throw DataError("dataset is not valid JSON: " + std::string(e.what()));
    }
    for (std::size_t i = 0; i < arr.size(); ++i)
      raw.emplace_back("record " + std::to_string(i), arr[i]);
  } else {
    std::istringstream lines(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(lines, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      try {
        raw.emplace_back("line " + std::to_string(lineno), json::parse(line));
      } catch (const json::exception& e) {
        if (mode == SchemaMode::strict)
          throw DataError("line " + std::to_string(lineno) + ": not valid JSON: " + e.what());
        raw.emplace_back("line " + std::to_string(lineno),
                         json());  // null marker, rejected below
      }
    }
  }

  LoadResult result;
  std::unordered_set<std::string> ids;
  for (const auto& [where, rec] : raw) {
    try {
      QtExample ex = detail::parse_example(rec, fields, mode);
      if (!ids.insert(ex.example_id).second)
        throw DataError("duplicate example_id '" + ex.example_id + "'");
      result.examples.push_back(std::move(ex));
    } catch (const DataError& e) {
      if (mode == SchemaMode::strict) throw DataError(where + ": " + e.what());
      ++result.skipped;
      result.issues.push_back(where + ": " + e.what());
    }
  }
  if (result.examples.empty())
    throw DataError("no valid records in dataset: " + path.string());
  return result;
}

// Canonical record serialization (load / save round-trip).
inline json example_to_json(const QtExample& ex) {
  json t{{"id", ex.table.id},
         {"title", ex.table.title},
         {"header", ex.table.header},
         {"rows", ex.table.rows}};
  json rec{{"example_id", ex.example_id}, {"query", ex.query}, {"table", t}};
  if (ex.reference_summary) rec["summary"] = *ex.reference_summary;
  return rec;
}

inline void save_dataset(const std::filesystem::path& path,
                         const std::vector<QtExample>& examples) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset file: " + path.string());
  for (const QtExample& ex : examples) out << example_to_json(ex).dump() << "\n";
}

// Deterministic uniform sample without replacement; order fixed by seed.
inline DatasetSplit sample_split(const std::vector<QtExample>& examples, std::size_t size,
                                 std::uint64_t seed, std::string name = "sample") {
  DatasetSplit split;
  split.name = std::move(name);
  split.seed = seed;
  split.examples = sample_without_replacement(examples, size, seed);
  return split;
}

}  // namespace qfts
