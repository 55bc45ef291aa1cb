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

#include <chrono>
#include <cstdlib>
#include <memory>
#include <string>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "qfts/error.hpp"
#include "qfts/llm_client.hpp"

namespace qfts {

inline constexpr const char* kChatCompletionsPath = "/v1/chat/completions";

// Chat-completion HTTP client with deterministic disk caching, bounded
// retries with exponential backoff, and a shared rate limiter. The wire shape
// is the ubiquitous chat-completions JSON, so any compatible provider or the
// bundled mock serves both the decomposer and the summarizer.
//
// Thread safety: complete() may be called from many tasks at once. Each call
// opens its own connection; the limiter serializes dispatch; cache writes are
// atomic renames.
class HttpLlmClient : public CompletionClient {
 public:
  explicit HttpLlmClient(LlmClientConfig config)
      : config_(std::move(config)),
        limiter_(config_.requests_per_minute) {
    if (!config_.cache_dir.empty()) cache_ = std::make_unique<DiskCache>(config_.cache_dir);
    if (config_.offline && !cache_)
      throw ConfigError("offline mode requires a cache_dir");
  }

  const LlmClientConfig& config() const { return config_; }

  LlmResponse complete(const LlmRequest& request) override {
    request.validate();
    const auto started = std::chrono::steady_clock::now();
    const std::string fp = fingerprint(request);

    if (cache_) {
      if (auto hit = cache_->lookup(fp)) {
        LlmResponse r;
        r.text = std::move(*hit);
        r.cached = true;
        r.latency_ms = elapsed_ms(started);
        r.request_fingerprint = fp;
        r.attempts = 0;
        return r;
      }
    }
    if (config_.offline)
      throw CacheMissOffline("cache miss in offline mode for fingerprint " + fp);
    if (config_.base_url.empty())
      throw ConfigError("llm client has no base_url configured");

    std::string last_error;
    const int max_attempts = config_.max_retries + 1;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
      if (attempt > 1) {
        const long delay = static_cast<long>(config_.backoff_ms) << (attempt - 2);
        std::this_thread::sleep_for(std::chrono::milliseconds(delay));
      }
      limiter_.acquire();
      httplib::Client cli(config_.base_url);
      cli.set_connection_timeout(std::chrono::milliseconds(config_.timeout_ms));
      cli.set_read_timeout(std::chrono::milliseconds(config_.timeout_ms));
      httplib::Headers headers;
      if (const char* key = credential()) headers.emplace("Authorization", std::string("Bearer ") + key);
      const nlohmann::json payload{
          {"model", request.model_name},
          {"messages", nlohmann::json::array({{{"role", "user"}, {"content", request.prompt}}})},
          {"temperature", request.temperature},
          {"max_tokens", request.max_output_tokens}};
      httplib::Result res =
          cli.Post(kChatCompletionsPath, headers, payload.dump(), "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 401 || res->status == 403)
        throw AuthError("endpoint rejected credentials (HTTP " + std::to_string(res->status) +
                        ")");
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200)
        throw NetworkError("endpoint returned HTTP " + std::to_string(res->status) + ": " +
                           res->body);
      LlmResponse out;
      out.text = parse_completion(res->body);
      out.cached = false;
      out.latency_ms = elapsed_ms(started);
      out.request_fingerprint = fp;
      out.attempts = attempt;
      if (cache_) cache_->store(fp, request, out.text);
      return out;
    }
    throw NetworkError("exhausted " + std::to_string(max_attempts) + " attempts (" +
                       last_error + ")");
  }

  LlmResponse complete_prompt(const std::string& prompt, Purpose purpose) override {
    LlmRequest req;
    req.model_name = config_.model_name;
    req.prompt = prompt;
    req.temperature = config_.temperature;
    req.max_output_tokens = config_.max_output_tokens;
    req.purpose = purpose;
    return complete(req);
  }

 private:
  static long elapsed_ms(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - start)
        .count();
  }

  const char* credential() const {
    if (config_.api_key_env.empty()) return nullptr;
    const char* v = std::getenv(config_.api_key_env.c_str());
    return (v != nullptr && v[0] != '\0') ? v : nullptr;
  }

  static std::string parse_completion(const std::string& body) {
    try {
      const nlohmann::json j = nlohmann::json::parse(body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw NetworkError("malformed completion response: " + std::string(e.what()));
    }
  }

  LlmClientConfig config_;
  std::unique_ptr<DiskCache> cache_;
  RateLimiter limiter_;
};

}  // namespace qfts
