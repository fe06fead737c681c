// SPDX-License-Identifier: Apache-2.0
#include "flame/deploy/agent.hpp"

#include <signal.h>

#include <spdlog/spdlog.h>

#include <algorithm>
#include <csignal>
#include <fstream>

namespace flame::deploy {

namespace fs = std::filesystem;
using control::TaskStatus;
using Clock = std::chrono::steady_clock;

std::string_view to_string(AgentPhase p) {
  switch (p) {
    case AgentPhase::Fetching:
      return "fetching";
    case AgentPhase::Running:
      return "running";
    case AgentPhase::Done:
      return "done";
    case AgentPhase::Failed:
      return "failed";
    case AgentPhase::Terminated:
      return "terminated";
  }
  return "?";
}

// ---- agent ----

Agent::Agent(AgentOptions opts) : opts_(std::move(opts)), api_(control::ApiClient::from_url(opts_.api_url)) {}

Agent::~Agent() {
  revoke();
  wait();
}

fs::path Agent::sandbox() const { return opts_.work_root / opts_.job_id / opts_.worker_id; }
fs::path Agent::log_file() const { return opts_.work_root / opts_.job_id / (opts_.worker_id + ".log"); }

std::string Agent::detail() const {
  std::lock_guard lock(mu_);
  return detail_;
}

void Agent::start(std::function<void(Agent&)> on_finish) {
  on_finish_ = std::move(on_finish);
  thread_ = std::thread([this] { run(); });
}

void Agent::revoke() {
  {
    std::lock_guard lock(mu_);
    revoked_ = true;
  }
  cv_.notify_all();
}

void Agent::wait() {
  if (thread_.joinable()) thread_.join();
}

bool Agent::sleep_unless_revoked(std::chrono::milliseconds d) {
  std::unique_lock lock(mu_);
  return !cv_.wait_for(lock, d, [this] { return revoked_.load(); });
}

void Agent::report(TaskStatus status, const std::string& detail, bool terminal) {
  const auto deadline = Clock::now() + opts_.report_deadline;
  auto backoff = std::chrono::milliseconds(100);
  while (true) {
    try {
      api_.report_status(opts_.job_id, opts_.worker_id, status, detail);
      return;
    } catch (const control::ApiError& e) {
      spdlog::warn("{}/{}: status {} rejected: {}", opts_.job_id, opts_.worker_id, control::to_string(status),
                   e.what());
      return;
    } catch (const control::ServerUnavailable& e) {
      if (!terminal || Clock::now() >= deadline) {
        if (terminal) spdlog::error("{}/{}: could not report {}: {}", opts_.job_id, opts_.worker_id,
                                    control::to_string(status), e.what());
        return;
      }
    }
    std::this_thread::sleep_for(backoff);
    backoff = std::min(backoff * 2, std::chrono::milliseconds(2000));
  }
}

fl::TaskManifest Agent::fetch() {
  auto backoff = opts_.fetch_backoff;
  std::string last;
  for (int attempt = 0; attempt <= opts_.fetch_retries; ++attempt) {
    if (attempt > 0) {
      spdlog::info("{}/{}: manifest fetch failed ({}), retry {} in {} ms", opts_.job_id, opts_.worker_id, last, attempt,
                   backoff.count());
      if (!sleep_unless_revoked(backoff)) throw FetchFailed("revoked while fetching");
      backoff *= 2;
    }
    try {
      return api_.manifest(opts_.job_id, opts_.worker_id);
    } catch (const Error& e) {
      last = e.what();
    }
  }
  throw FetchFailed("manifest fetch failed after " + std::to_string(opts_.fetch_retries) + " retries: " + last);
}

void Agent::finish(AgentPhase phase, const std::string& detail) {
  {
    std::lock_guard lock(mu_);
    detail_ = detail;
  }
  phase_ = phase;
  const auto status = phase == AgentPhase::Done     ? TaskStatus::Done
                      : phase == AgentPhase::Failed ? TaskStatus::Failed
                                                    : TaskStatus::Terminated;
  spdlog::info("{}/{}: {} {}", opts_.job_id, opts_.worker_id, to_string(phase), detail);
  report(status, detail, true);
  finished_ = true;
  if (on_finish_) on_finish_(*this);
}

void Agent::run() {
  fl::TaskManifest manifest;
  try {
    if (opts_.manifest) {
      manifest = *opts_.manifest;
    } else {
      report(TaskStatus::Fetching, {}, false);
      manifest = fetch();
    }
  } catch (const FetchFailed& e) {
    finish(revoked_ ? AgentPhase::Terminated : AgentPhase::Failed, e.what());
    return;
  }
  if (revoked_) {
    finish(AgentPhase::Terminated, "revoked before start");
    return;
  }

  ChildProcess child;
  try {
    const auto dir = sandbox();
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto manifest_path = dir / "manifest.json";
    {
      std::ofstream out(manifest_path);
      out << fl::manifest_to_json(manifest).dump(2) << "\n";
    }
    auto argv = opts_.worker_command;
    child = ChildProcess::spawn(argv,
                                {{"FLAME_API", opts_.api_url},
                                 {"FLAME_JOB_ID", opts_.job_id},
                                 {"FLAME_WORKER_ID", opts_.worker_id},
                                 {"FLAME_MANIFEST_PATH", manifest_path.string()}},
                                dir, log_file());
  } catch (const std::exception& e) {
    finish(AgentPhase::Failed, e.what());
    return;
  }
  phase_ = AgentPhase::Running;
  report(TaskStatus::Running, {}, false);

  auto next_heartbeat = Clock::now() + opts_.heartbeat_period;
  std::optional<Clock::time_point> term_sent;
  bool killed = false;
  while (!child.poll()) {
    const auto now = Clock::now();
    if (revoked_ && !term_sent) {
      child.signal(SIGTERM);
      term_sent = now;
    }
    if (term_sent && !killed && now - *term_sent >= opts_.grace) {
      spdlog::warn("{}/{}: grace period over, killing", opts_.job_id, opts_.worker_id);
      child.signal(SIGKILL);
      killed = true;
    }
    if (now >= next_heartbeat) {
      report(TaskStatus::Running, {}, false);
      next_heartbeat = now + opts_.heartbeat_period;
    }
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, std::chrono::milliseconds(20), [&] { return revoked_ && !term_sent; });
  }
  const auto exit = child.wait();
  if (revoked_)
    finish(AgentPhase::Terminated, exit.describe());
  else if (exit.success())
    finish(AgentPhase::Done, exit.describe());
  else
    finish(AgentPhase::Failed, exit.describe());
}

std::unique_ptr<Agent> join_unmanaged(AgentOptions opts) {
  auto api = control::ApiClient::from_url(opts.api_url);
  opts.manifest = api.claim_slot(opts.job_id, opts.worker_id);
  return std::make_unique<Agent>(std::move(opts));
}

// ---- deployer ----

Deployer::Deployer(DeployerOptions opts) : opts_(std::move(opts)), api_(control::ApiClient::from_url(opts_.api_url)) {}

Deployer::~Deployer() { stop(); }

void Deployer::start() {
  subscriber_ = std::thread([this] { subscribe_loop(); });
}

void Deployer::subscribe_loop() {
  while (!stopping_) {
    try {
      api_.subscribe(
          opts_.deployer_id,
          [this](const control::Event& e) {
            handle(e);
            try {
              api_.ack(opts_.deployer_id, e.id);
            } catch (const Error& err) {
              spdlog::warn("deployer {}: ack {} failed: {}", opts_.deployer_id, e.id, err.what());
            }
            return !stopping_;
          },
          [this] { return !stopping_.load(); });
    } catch (const Error& e) {
      spdlog::debug("deployer {}: event stream: {}", opts_.deployer_id, e.what());
    }
    for (auto waited = std::chrono::milliseconds(0); waited < opts_.reconnect && !stopping_;
         waited += std::chrono::milliseconds(20))
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
}

void Deployer::handle(const control::Event& e) {
  std::vector<Pending> dropped;
  {
    std::lock_guard lock(mu_);
    if (!seen_.insert(e.id).second) return;
    spdlog::info("deployer {}: {} event {} for job {}", opts_.deployer_id, control::to_string(e.kind), e.id,
                 e.job_id);
    if (e.kind == control::EventKind::Deploy) {
      for (const auto& w : e.payload.value("workers", std::vector<std::string>{})) {
        const auto key = e.job_id + "/" + w;
        const bool queued = std::any_of(queue_.begin(), queue_.end(),
                                        [&](const Pending& p) { return p.job_id == e.job_id && p.worker_id == w; });
        if (agents_.contains(key) || queued) continue;
        queue_.push_back({e.job_id, w});
      }
      pump();
    } else if (e.kind == control::EventKind::Revoke) {
      for (auto it = queue_.begin(); it != queue_.end();) {
        if (it->job_id == e.job_id) {
          dropped.push_back(*it);
          it = queue_.erase(it);
        } else {
          ++it;
        }
      }
      for (auto& [key, agent] : agents_)
        if (agent->job_id() == e.job_id) agent->revoke();
    }
  }
  for (const auto& p : dropped) {
    try {
      api_.report_status(p.job_id, p.worker_id, control::TaskStatus::Terminated, "revoked while queued");
    } catch (const Error& err) {
      spdlog::warn("deployer {}: {}", opts_.deployer_id, err.what());
    }
  }
}

void Deployer::pump() {
  while (!stopping_ && live_ < static_cast<std::size_t>(opts_.capacity) && !queue_.empty()) {
    const auto next = queue_.front();
    queue_.pop_front();
    AgentOptions ao;
    ao.api_url = opts_.api_url;
    ao.job_id = next.job_id;
    ao.worker_id = next.worker_id;
    ao.work_root = opts_.work_root;
    ao.worker_command = opts_.worker_command;
    ao.heartbeat_period = opts_.heartbeat_period;
    ao.grace = opts_.grace;
    ao.fetch_retries = opts_.fetch_retries;
    ao.fetch_backoff = opts_.fetch_backoff;
    auto agent = std::make_unique<Agent>(std::move(ao));
    auto* raw = agent.get();
    agents_[next.job_id + "/" + next.worker_id] = std::move(agent);
    ++live_;
    peak_ = std::max(peak_, live_);
    raw->start([this](Agent&) {
      std::lock_guard lock(mu_);
      --live_;
      pump();
    });
  }
}

void Deployer::stop() {
  if (stopping_.exchange(true)) {
    if (subscriber_.joinable()) subscriber_.join();
    return;
  }
  std::vector<Agent*> agents;
  {
    std::lock_guard lock(mu_);
    queue_.clear();
    for (auto& [_, a] : agents_) {
      a->revoke();
      agents.push_back(a.get());
    }
  }
  for (auto* a : agents) a->wait();
  if (subscriber_.joinable()) subscriber_.join();
}

std::size_t Deployer::live() const {
  std::lock_guard lock(mu_);
  return live_;
}

std::size_t Deployer::queued() const {
  std::lock_guard lock(mu_);
  return queue_.size();
}

std::size_t Deployer::peak_live() const {
  std::lock_guard lock(mu_);
  return peak_;
}

std::size_t Deployer::handled_events() const {
  std::lock_guard lock(mu_);
  return seen_.size();
}

std::map<std::string, AgentPhase> Deployer::phases() const {
  std::lock_guard lock(mu_);
  std::map<std::string, AgentPhase> out;
  for (const auto& [key, a] : agents_) out[key] = a->phase();
  return out;
}

}  // namespace flame::deploy
