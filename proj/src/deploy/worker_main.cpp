// SPDX-License-Identifier: Apache-2.0
#include <signal.h>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include <nlohmann/json.hpp>

#include "flame/deploy/agent.hpp"
#include "flame/fl/worker.hpp"

namespace flame::deploy {

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_term(int) { g_stop = true; }

}  // namespace

int worker_main() {
  const char* path = std::getenv("FLAME_MANIFEST_PATH");
  if (path == nullptr) {
    std::fprintf(stderr, "FLAME_MANIFEST_PATH is not set\n");
    return 2;
  }
  struct sigaction sa {};
  sa.sa_handler = on_term;
  ::sigemptyset(&sa.sa_mask);
  ::sigaction(SIGTERM, &sa, nullptr);
  ::sigaction(SIGINT, &sa, nullptr);

  try {
    std::ifstream in(path);
    if (!in) throw Error("BadManifest", std::string("cannot read ") + path);
    const auto manifest = fl::manifest_from_json(nlohmann::ordered_json::parse(in));
    auto fabric = manifest.broker_port != 0 ? channel::Fabric::remote(manifest.broker_host, manifest.broker_port)
                                            : channel::Fabric::in_process();
    fl::WorkerOptions opts;
    opts.stop_requested = [] { return g_stop.load(); };
    opts.observer = [](const tasklet::TraceEvent& ev) {
      const nlohmann::ordered_json line{{"alias", ev.alias}, {"iteration", ev.iteration}, {"ms", ev.duration_ms}};
      std::fprintf(stderr, "trace %s\n", line.dump().c_str());
    };
    const auto result = fl::run_worker(manifest, fabric, opts);
    if (result.status == fl::WorkerStatus::Stopped) {
      std::fprintf(stderr, "stopped after %zu rounds\n", result.rounds.size());
      return 128 + SIGTERM;
    }
    std::fprintf(stderr, "completed %zu rounds\n", result.rounds.size());
    return 0;
  } catch (const std::exception& e) {
    if (g_stop) {
      std::fprintf(stderr, "stopped after revoke interrupted: %s\n", e.what());
      return 128 + SIGTERM;
    }
    std::fprintf(stderr, "worker failed: %s\n", e.what());
    return 1;
  }
}

}  // namespace flame::deploy
