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
//
// Standalone deterministic chat-completions endpoint for offline testing and
// CI. Responses come from a rules file; without one it echoes prompts.

#include <csignal>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "qfts/mock_llm.hpp"

namespace {
volatile std::sig_atomic_t g_stop = 0;
void handle_signal(int) { g_stop = 1; }
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deterministic mock chat-completions endpoint"};
  int port = 0;
  std::string rules_path, port_file;
  app.add_option("--port", port, "port to bind (0 = ephemeral)");
  app.add_option("--rules", rules_path, "JSON rules file");
  app.add_option("--port-file", port_file, "write the bound port to this file");
  CLI11_PARSE(app, argc, argv);

  try {
    qfts::MockBehavior behavior;
    behavior.echo = true;
    if (!rules_path.empty()) behavior = qfts::MockBehavior::load(rules_path);

    qfts::MockLlmServer server(behavior);
    const int bound = server.start(port);
    std::cout << "listening on 127.0.0.1:" << bound << std::endl;
    if (!port_file.empty()) {
      std::ofstream pf(port_file);
      pf << bound << "\n";
    }

    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    while (g_stop == 0) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    server.stop();
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
