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
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "qfts/error.hpp"
#include "qfts/llm_client.hpp"

namespace qfts {

// Canned behavior for the bundled mock endpoint. Deterministic by
// construction: the same prompt always yields the same response.
//
//   echo == true        -> respond with the prompt itself
//   rules               -> first rule whose `contains` occurs in the prompt wins
//   default_response    -> fallback when nothing matches
//   fail_first          -> reply `fail_status` to the first N requests (for
//                          retry tests)
struct MockRule {
  std::string contains;
  std::string response;
};

struct MockBehavior {
  std::string default_response = "OK.";
  bool echo = false;
  std::vector<MockRule> rules;
  int fail_first = 0;
  int fail_status = 429;

  static MockBehavior from_json(const nlohmann::json& j) {
    MockBehavior b;
    if (j.contains("default_response")) j.at("default_response").get_to(b.default_response);
    if (j.contains("echo")) j.at("echo").get_to(b.echo);
    if (j.contains("fail_first")) j.at("fail_first").get_to(b.fail_first);
    if (j.contains("fail_status")) j.at("fail_status").get_to(b.fail_status);
    if (j.contains("rules")) {
      for (const auto& r : j.at("rules"))
        b.rules.push_back({r.at("contains").get<std::string>(),
                           r.at("response").get<std::string>()});
    }
    return b;
  }

  static MockBehavior load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open mock rules file: " + path.string());
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("invalid mock rules file: " + std::string(e.what()));
    }
  }

  std::string respond(const std::string& prompt) const {
    for (const MockRule& r : rules)
      if (!r.contains.empty() && prompt.find(r.contains) != std::string::npos)
        return r.response;
    if (echo) return prompt;
    return default_response;
  }
};

// In-process chat-completions server used for offline testing and CI. The
// same class backs the standalone mock binary.
class MockLlmServer {
 public:
  explicit MockLlmServer(MockBehavior behavior = {}) : behavior_(std::move(behavior)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req,
                                                httplib::Response& res) {
      const int served = requests_.fetch_add(1);
      if (served < behavior_.fail_first) {
        res.status = behavior_.fail_status;
        res.set_content("{\"error\": \"induced failure\"}", "application/json");
        return;
      }
      std::string prompt;
      try {
        const nlohmann::json j = nlohmann::json::parse(req.body);
        prompt = j.at("messages").at(0).at("content").get<std::string>();
      } catch (const nlohmann::json::exception&) {
        res.status = 400;
        res.set_content("{\"error\": \"bad request\"}", "application/json");
        return;
      }
      if (!require_bearer_.empty()) {
        const auto auth = req.get_header_value("Authorization");
        if (auth != "Bearer " + require_bearer_) {
          res.status = 401;
          res.set_content("{\"error\": \"unauthorized\"}", "application/json");
          return;
        }
      }
      const nlohmann::json out{
          {"choices",
           nlohmann::json::array(
               {{{"message", {{"role", "assistant"}, {"content", behavior_.respond(prompt)}}}}})}};
      res.set_content(out.dump(), "application/json");
    });
  }

  ~MockLlmServer() { stop(); }

  // Binds 127.0.0.1 (an ephemeral port when port == 0) and serves on a
  // background thread. Returns the bound port.
  int start(int port = 0) {
    if (port == 0) {
      port_ = server_.bind_to_any_port("127.0.0.1");
      if (port_ < 0) throw Error("mock server failed to bind");
    } else {
      if (!server_.bind_to_port("127.0.0.1", port))
        throw Error("mock server failed to bind port " + std::to_string(port));
      port_ = port;
    }
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

  int port() const { return port_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int requests_served() const { return requests_.load(); }
  void require_bearer(std::string token) { require_bearer_ = std::move(token); }

 private:
  MockBehavior behavior_;
  std::string require_bearer_;
  httplib::Server server_;
  std::thread thread_;
  std::atomic<int> requests_{0};
  int port_ = -1;
};

}  // namespace qfts
