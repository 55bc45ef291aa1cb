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
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "qfts/error.hpp"
#include "qfts/harness.hpp"

namespace qfts {

// Application configuration: one JSON file feeding every subcommand, with
// flag overrides applied by the CLI on top (flags > environment > file). The
// only environment input is the API credential, read at request time from the
// variable named by api_key_env.
struct AppConfig {
  RunConfig run;
  std::size_t annotate_size = 100;
  std::uint64_t annotate_seed = 7;
  std::string decomposition_template_path;
  std::string summarization_template_path;

  static AppConfig from_json(const json& j) {
    AppConfig cfg;
    if (j.contains("dataset")) {
      const json& d = j["dataset"];
      if (d.contains("path")) d.at("path").get_to(cfg.run.dataset_path);
      if (d.contains("schema_mode")) {
        const std::string m = d.at("schema_mode").get<std::string>();
        if (m == "strict") cfg.run.schema_mode = SchemaMode::strict;
        else if (m == "lenient") cfg.run.schema_mode = SchemaMode::lenient;
        else throw ConfigError("dataset.schema_mode must be strict or lenient");
      }
      if (d.contains("field_map")) {
        const json& f = d["field_map"];
        FieldMap& map = cfg.run.field_map;
        auto get = [&f](const char* key, std::string& slot) {
          if (f.contains(key)) f.at(key).get_to(slot);
        };
        get("example_id", map.example_id);
        get("query", map.query);
        get("summary", map.summary);
        get("table", map.table);
        get("table_id", map.table_id);
        get("table_title", map.table_title);
        get("table_header", map.table_header);
        get("table_rows", map.table_rows);
      }
    }
    if (j.contains("run")) {
      const json& r = j["run"];
      if (r.contains("size")) r.at("size").get_to(cfg.run.sample_size);
      if (r.contains("seed")) r.at("seed").get_to(cfg.run.seed);
      if (r.contains("parallelism")) r.at("parallelism").get_to(cfg.run.parallelism);
      if (r.contains("out_dir")) r.at("out_dir").get_to(cfg.run.out_dir);
      if (r.contains("modes")) {
        cfg.run.modes.clear();
        for (const json& m : r.at("modes"))
          cfg.run.modes.push_back(mode_from_string(m.get<std::string>()));
      }
      if (r.contains("budget")) cfg.run.budget = parse_budget(r.at("budget"));
    }
    if (j.contains("decomposer")) j.at("decomposer").get_to(cfg.run.decomposer);
    if (j.contains("summarizer")) j.at("summarizer").get_to(cfg.run.summarizer);
    if (j.contains("metrics")) {
      const json& m = j["metrics"];
      if (m.contains("normalizer"))
        cfg.run.metrics.normalizer =
            normalizer_mode_from_string(m.at("normalizer").get<std::string>());
      if (m.contains("bleu_max_n")) m.at("bleu_max_n").get_to(cfg.run.metrics.bleu_max_n);
      if (m.contains("parent_lambda"))
        m.at("parent_lambda").get_to(cfg.run.metrics.parent_lambda);
    }
    if (j.contains("annotate")) {
      const json& a = j["annotate"];
      if (a.contains("size")) a.at("size").get_to(cfg.annotate_size);
      if (a.contains("seed")) a.at("seed").get_to(cfg.annotate_seed);
    }
    if (j.contains("templates")) {
      const json& t = j["templates"];
      if (t.contains("decomposition_path"))
        t.at("decomposition_path").get_to(cfg.decomposition_template_path);
      if (t.contains("summarization_path"))
        t.at("summarization_path").get_to(cfg.summarization_template_path);
    }
    cfg.load_templates();
    return cfg;
  }

  static TokenBudget parse_budget(const json& b) {
    if (b.is_number_integer() || b.is_string()) {
      const std::string preset = b.is_string() ? b.get<std::string>()
                                               : std::to_string(b.get<long>());
      if (preset == "512") return TokenBudget::preset_512();
      if (preset == "1024") return TokenBudget::preset_1024();
      throw ConfigError("unknown budget preset '" + preset + "' (expected 512 or 1024)");
    }
    TokenBudget budget;
    if (b.contains("max_tokens")) b.at("max_tokens").get_to(budget.max_tokens);
    if (b.contains("estimator")) {
      const std::string e = b.at("estimator").get<std::string>();
      if (e == "whitespace_words") budget.estimator = TokenEstimator::whitespace_words;
      else if (e == "chars_div_4") budget.estimator = TokenEstimator::chars_div_4;
      else throw ConfigError("unknown token estimator: " + e);
    }
    budget.validate();
    return budget;
  }

  static AppConfig load(const std::optional<std::filesystem::path>& file) {
    if (!file) {
      AppConfig cfg;
      return cfg;
    }
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot open config file: " + file->string());
    try {
      return from_json(json::parse(in));
    } catch (const json::exception& e) {
      throw ConfigError("invalid config file " + file->string() + ": " + e.what());
    }
  }

  void load_templates() {
    if (!decomposition_template_path.empty())
      run.templates.decomposition_body = read_text_file(decomposition_template_path);
    if (!summarization_template_path.empty())
      run.templates.summarization_body = read_text_file(summarization_template_path);
  }
};

}  // namespace qfts
