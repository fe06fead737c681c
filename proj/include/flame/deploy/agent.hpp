// SPDX-License-Identifier: Apache-2.0
// Agents supervise one worker process each; a deployer hosts the agents of
// one compute and reacts to control-plane events.
#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "flame/control/client.hpp"
#include "flame/deploy/process.hpp"
#include "flame/fl/manifest.hpp"

namespace flame::deploy {

FLAME_DEFINE_ERROR(FetchFailed);

enum class AgentPhase { Fetching, Running, Done, Failed, Terminated };
std::string_view to_string(AgentPhase p);

struct AgentOptions {
  std::string api_url;
  std::string job_id;
  std::string worker_id;
  std::filesystem::path work_root;
  // Command prefix that runs a worker, e.g. {"/usr/bin/flame", "worker"}.
  std::vector<std::string> worker_command;
  std::chrono::milliseconds heartbeat_period{2000};
  std::chrono::milliseconds grace{5000};
  int fetch_retries = 3;
  std::chrono::milliseconds fetch_backoff{250};
  // How long a terminal status report is retried while the API is down.
  std::chrono::milliseconds report_deadline{120000};
  // Preset manifest (unmanaged join); skips the fetch.
  std::optional<fl::TaskManifest> manifest;
};

class Agent {
 public:
  explicit Agent(AgentOptions opts);
  ~Agent();
  Agent(const Agent&) = delete;
  Agent& operator=(const Agent&) = delete;

  // `on_finish` runs on the agent thread after the terminal status is reported.
  void start(std::function<void(Agent&)> on_finish = {});
  // Graceful stop, then a hard kill after the grace period. Idempotent.
  void revoke();
  void wait();

  const std::string& job_id() const { return opts_.job_id; }
  const std::string& worker_id() const { return opts_.worker_id; }
  AgentPhase phase() const { return phase_.load(); }
  bool finished() const { return finished_.load(); }
  std::string detail() const;
  std::filesystem::path sandbox() const;
  std::filesystem::path log_file() const;

 private:
  void run();
  fl::TaskManifest fetch();
  void report(control::TaskStatus status, const std::string& detail, bool terminal);
  void finish(AgentPhase phase, const std::string& detail);
  bool sleep_unless_revoked(std::chrono::milliseconds d);

  AgentOptions opts_;
  control::ApiClient api_;
  std::atomic<AgentPhase> phase_{AgentPhase::Fetching};
  std::atomic<bool> revoked_{false};
  std::atomic<bool> finished_{false};
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::string detail_;
  std::function<void(Agent&)> on_finish_;
  std::thread thread_;
};

struct DeployerOptions {
  std::string api_url;
  std::string deployer_id;  // the compute id it serves
  int capacity = 1;
  std::filesystem::path work_root;
  std::vector<std::string> worker_command;
  std::chrono::milliseconds heartbeat_period{2000};
  std::chrono::milliseconds grace{5000};
  int fetch_retries = 3;
  std::chrono::milliseconds fetch_backoff{250};
  std::chrono::milliseconds reconnect{300};
};

class Deployer {
 public:
  explicit Deployer(DeployerOptions opts);
  ~Deployer();
  Deployer(const Deployer&) = delete;
  Deployer& operator=(const Deployer&) = delete;

  // Subscribes to the notifier on a background thread.
  void start();
  // Revokes every agent, waits for them, and closes the subscription.
  void stop();
  void handle(const control::Event& e);

  std::size_t live() const;
  std::size_t queued() const;
  std::size_t peak_live() const;
  std::size_t handled_events() const;
  // Phases of every agent started so far, keyed "job/worker".
  std::map<std::string, AgentPhase> phases() const;

 private:
  struct Pending {
    std::string job_id;
    std::string worker_id;
  };
  void subscribe_loop();
  void pump();
  void reap();

  DeployerOptions opts_;
  control::ApiClient api_;
  mutable std::mutex mu_;
  std::list<Pending> queue_;
  std::map<std::string, std::unique_ptr<Agent>> agents_;  // "job/worker"
  std::set<std::uint64_t> seen_;
  std::size_t live_ = 0;
  std::size_t peak_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread subscriber_;
};

// Non-orchestration mode: claims an unmanaged data-consumer slot and runs it
// under a fresh agent. Errors of the claim (SlotAlreadyFilled,
// JobNotRunning) propagate as control::ApiError.
std::unique_ptr<Agent> join_unmanaged(AgentOptions opts);

// Entry point of a worker process: reads the manifest named by
// FLAME_MANIFEST_PATH and runs it; SIGTERM stops it at the next tasklet
// boundary. Returns the process exit code.
int worker_main();

}  // namespace flame::deploy
