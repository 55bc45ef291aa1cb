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
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <openssl/evp.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "qfts/error.hpp"

namespace qfts {

enum class Purpose { decompose, summarize };

inline std::string to_string(Purpose p) {
  return p == Purpose::decompose ? "decompose" : "summarize";
}

struct LlmRequest {
  std::string model_name;
  std::string prompt;
  double temperature = 0.0;
  int max_output_tokens = 256;
  Purpose purpose = Purpose::summarize;

  void validate() const {
    if (prompt.empty()) throw ConfigError("llm request: empty prompt");
    if (max_output_tokens <= 0) throw ConfigError("llm request: max_output_tokens must be > 0");
    if (temperature < 0.0 || temperature > 1.0)
      throw ConfigError("llm request: temperature must be in [0,1]");
  }
};

struct LlmResponse {
  std::string text;
  bool cached = false;
  long latency_ms = 0;
  std::string request_fingerprint;
  int attempts = 0;  // network attempts; 0 on a cache hit
};

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xf];
  }
  return out;
}

// Stable content hash of the request fields that determine the completion.
// Keys are serialized in sorted order, so the value survives process
// restarts and is shared by any client pointed at the same cache.
inline std::string fingerprint(const LlmRequest& req) {
  nlohmann::json j{{"max_output_tokens", req.max_output_tokens},
                   {"model_name", req.model_name},
                   {"prompt", req.prompt},
                   {"temperature", req.temperature}};
  return sha256_hex(j.dump());
}

// Uniform handle used by the decomposer and summarizer stages; backed by the
// HTTP client in production and by scripted fakes in tests.
class CompletionClient {
 public:
  virtual ~CompletionClient() = default;
  virtual LlmResponse complete(const LlmRequest& request) = 0;
  // Builds a request from the client's configured model parameters.
  virtual LlmResponse complete_prompt(const std::string& prompt, Purpose purpose) = 0;
};

// ---------------------------------------------------------------------------
// Disk cache: one file per entry, written with the write-then-rename
// discipline so concurrent writers never expose a torn entry. Reads take no
// lock.

class DiskCache {
 public:
  explicit DiskCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  const std::filesystem::path& dir() const { return dir_; }

  std::optional<std::string> lookup(const std::string& fp) const {
    std::ifstream in(entry_path(fp));
    if (!in) return std::nullopt;
    try {
      nlohmann::json j = nlohmann::json::parse(in);
      return j.at("response_text").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      return std::nullopt;  // stray or foreign file; treat as a miss
    }
  }

  void store(const std::string& fp, const LlmRequest& req, const std::string& text) const {
    nlohmann::json entry{{"request",
                          {{"model_name", req.model_name},
                           {"prompt", req.prompt},
                           {"temperature", req.temperature},
                           {"max_output_tokens", req.max_output_tokens},
                           {"purpose", to_string(req.purpose)}}},
                         {"response_text", text},
                         {"timestamp", iso8601_now()}};
    static std::atomic<std::uint64_t> counter{0};
    const std::filesystem::path tmp =
        dir_ / (".tmp-" + fp + "-" + std::to_string(::getpid()) + "-" +
                std::to_string(counter.fetch_add(1)));
    {
      std::ofstream out(tmp);
      if (!out) throw Error("cannot write cache entry: " + tmp.string());
      out << entry.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, entry_path(fp));
  }

  static std::string iso8601_now() {
    const std::time_t now = std::time(nullptr);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
  }

 private:
  std::filesystem::path entry_path(const std::string& fp) const {
    return dir_ / (fp + ".json");
  }

  std::filesystem::path dir_;
};

// ---------------------------------------------------------------------------
// Token-bucket rate limiter. Dispatch to the endpoint is serialized through
// acquire(); a rate of zero disables limiting.

class RateLimiter {
 public:
  explicit RateLimiter(double requests_per_minute)
      : rpm_(requests_per_minute),
        capacity_(std::max(1.0, requests_per_minute / 60.0)),
        tokens_(capacity_),
        last_(clock::now()) {}

  void acquire() {
    if (rpm_ <= 0.0) return;
    std::unique_lock<std::mutex> lock(mu_);
    for (;;) {
      refill();
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      const double deficit = 1.0 - tokens_;
      const auto wait = std::chrono::duration<double>(deficit * 60.0 / rpm_);
      cv_.wait_for(lock, wait);
    }
  }

 private:
  using clock = std::chrono::steady_clock;

  void refill() {
    const auto now = clock::now();
    const double elapsed = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    tokens_ = std::min(capacity_, tokens_ + elapsed * rpm_ / 60.0);
  }

  double rpm_;
  double capacity_;
  double tokens_;
  clock::time_point last_;
  std::mutex mu_;
  std::condition_variable cv_;
};

// ---------------------------------------------------------------------------
// Client configuration. The credential itself is never stored here; only the
// name of the environment variable holding it.

struct LlmClientConfig {
  std::string base_url;                 // e.g. http://127.0.0.1:8080
  std::string model_name = "default-model";
  double temperature = 0.0;
  int max_output_tokens = 256;
  int timeout_ms = 30000;
  int max_retries = 3;                  // retries after the first attempt
  int backoff_ms = 250;                 // doubled per retry
  double requests_per_minute = 0.0;     // 0 = unlimited
  std::string cache_dir;                // empty = caching disabled
  bool offline = false;                 // serve from cache only
  std::string api_key_env = "QFTS_API_KEY";

  bool configured() const { return !base_url.empty() || (offline && !cache_dir.empty()); }
};

// Snapshot form: local paths and the offline switch are execution details,
// not output-determining parameters, so they stay out (a cached replay must
// serialize identically to the original run).
inline void to_json(nlohmann::json& j, const LlmClientConfig& c) {
  j = nlohmann::json{{"base_url", c.base_url},
                     {"model_name", c.model_name},
                     {"temperature", c.temperature},
                     {"max_output_tokens", c.max_output_tokens},
                     {"timeout_ms", c.timeout_ms},
                     {"max_retries", c.max_retries},
                     {"backoff_ms", c.backoff_ms},
                     {"requests_per_minute", c.requests_per_minute},
                     {"api_key_env", c.api_key_env}};
}

inline void from_json(const nlohmann::json& j, LlmClientConfig& c) {
  if (j.contains("base_url")) j.at("base_url").get_to(c.base_url);
  if (j.contains("model_name")) j.at("model_name").get_to(c.model_name);
  if (j.contains("temperature")) j.at("temperature").get_to(c.temperature);
  if (j.contains("max_output_tokens")) j.at("max_output_tokens").get_to(c.max_output_tokens);
  if (j.contains("timeout_ms")) j.at("timeout_ms").get_to(c.timeout_ms);
  if (j.contains("max_retries")) j.at("max_retries").get_to(c.max_retries);
  if (j.contains("backoff_ms")) j.at("backoff_ms").get_to(c.backoff_ms);
  if (j.contains("requests_per_minute"))
    j.at("requests_per_minute").get_to(c.requests_per_minute);
  if (j.contains("cache_dir")) j.at("cache_dir").get_to(c.cache_dir);
  if (j.contains("offline")) j.at("offline").get_to(c.offline);
  if (j.contains("api_key_env")) j.at("api_key_env").get_to(c.api_key_env);
}

}  // namespace qfts
