// SPDX-License-Identifier: Apache-2.0
#include "flame/control/controller.hpp"

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <random>
#include <stdexcept>

#include "flame/expansion/expand.hpp"
#include "flame/tag/json.hpp"

namespace flame::control {

namespace {

std::string random_job_id() {
  static std::mutex mu;
  static std::random_device rd;
  static std::mt19937_64 gen(
      (static_cast<std::uint64_t>(rd()) << 32) ^ rd() ^
      static_cast<std::uint64_t>(std::chrono::high_resolution_clock::now().time_since_epoch().count()));
  std::lock_guard lock(mu);
  return fmt::format("{:016x}{:016x}", gen(), gen());
}

}  // namespace

Controller::Controller(ControllerOptions opts)
    : opts_(std::move(opts)), store_(opts_.store_dir, opts_.snapshot_every) {
  load();
}

Clock::time_point Controller::now() const { return opts_.clock ? opts_.clock() : Clock::now(); }

// ---- persistence ----

ordered_json Controller::state_json() const {
  ordered_json computes = ordered_json::array();
  for (const auto& [_, c] : computes_) computes.push_back(to_json(c));
  ordered_json datasets = ordered_json::array();
  for (const auto& id : dataset_order_) datasets.push_back(to_json(datasets_.at(id)));
  ordered_json jobs = ordered_json::array();
  for (const auto& [_, j] : jobs_) jobs.push_back(to_json(j));
  ordered_json events = ordered_json::array();
  for (const auto& [_, e] : events_) events.push_back(to_json(e));
  return {{"computes", computes}, {"datasets", datasets}, {"jobs", jobs}, {"events", events}, {"nextEvent", next_event_}};
}

void Controller::load() {
  auto loaded = store_.load();
  auto apply = [this](const ordered_json& change) {
    if (change.contains("compute")) {
      auto c = compute_from_json(change.at("compute"));
      computes_[c.compute_id] = c;
    } else if (change.contains("dataset")) {
      auto d = dataset_from_json(change.at("dataset"));
      if (!datasets_.contains(d.dataset_id)) dataset_order_.push_back(d.dataset_id);
      datasets_[d.dataset_id] = d;
    } else if (change.contains("job")) {
      auto j = job_from_json(change.at("job"));
      jobs_[j.job_id] = std::move(j);
    } else if (change.contains("event")) {
      auto e = event_from_json(change.at("event"));
      next_event_ = std::max(next_event_, e.id + 1);
      events_[e.id] = std::move(e);
    } else if (change.contains("ack")) {
      events_.erase(change.at("ack").get<std::uint64_t>());
    }
  };
  if (!loaded.snapshot.is_null()) {
    const auto& s = loaded.snapshot;
    for (const auto& c : s.at("computes")) apply({{"compute", c}});
    for (const auto& d : s.at("datasets")) apply({{"dataset", d}});
    for (const auto& j : s.at("jobs")) apply({{"job", j}});
    for (const auto& e : s.at("events")) apply({{"event", e}});
    next_event_ = std::max(next_event_, s.at("nextEvent").get<std::uint64_t>());
  }
  for (const auto& entry : loaded.entries)
    for (const auto& change : entry.at("batch")) apply(change);

  const auto t = now();
  for (const auto& [id, job] : jobs_)
    for (const auto& [worker, _] : job.tasks) last_seen_[{id, worker}] = t;
  if (!jobs_.empty() || !computes_.empty())
    spdlog::info("control plane recovered {} computes, {} datasets, {} jobs, {} pending events", computes_.size(),
                 datasets_.size(), jobs_.size(), events_.size());
}

void Controller::journal(ordered_json entry) { store_.append({{"batch", ordered_json::array({std::move(entry)})}}); }

// Snapshots only between operations, when memory and journal agree.
void Controller::maybe_snapshot() {
  if (!store_.snapshot_due()) return;
  try {
    store_.snapshot(state_json());
  } catch (const std::exception& e) {
    spdlog::error("snapshot failed: {}", e.what());
  }
}

void Controller::save_job(const JobRecord& job) { journal({{"job", to_json(job)}}); }

// ---- registry ----

std::string Controller::register_compute(ComputeRecord record) {
  if (record.compute_id.empty()) throw tag::SchemaError("compute id must not be empty");
  if (record.realm.empty()) throw tag::SchemaError("compute realm must not be empty");
  if (record.capacity < 1) throw tag::SchemaError("compute capacity must be positive");
  std::lock_guard lock(mu_);
  if (computes_.contains(record.compute_id)) throw DuplicateCompute("compute '" + record.compute_id + "' exists");
  journal({{"compute", to_json(record)}});
  computes_[record.compute_id] = record;
  maybe_snapshot();
  return record.compute_id;
}

std::string Controller::register_dataset(DatasetRecord record) {
  if (record.dataset_id.empty()) throw tag::SchemaError("dataset id must not be empty");
  if (record.realm.empty()) throw tag::SchemaError("dataset realm must not be empty");
  if (record.url.empty()) throw tag::SchemaError("dataset url must not be empty");
  std::lock_guard lock(mu_);
  if (datasets_.contains(record.dataset_id)) throw DuplicateDataset("dataset '" + record.dataset_id + "' exists");
  journal({{"dataset", to_json(record)}});
  dataset_order_.push_back(record.dataset_id);
  datasets_[record.dataset_id] = record;
  maybe_snapshot();
  return record.dataset_id;
}

std::vector<ComputeRecord> Controller::computes() const {
  std::lock_guard lock(mu_);
  std::vector<ComputeRecord> out;
  for (const auto& [_, c] : computes_) out.push_back(c);
  return out;
}

std::vector<DatasetRecord> Controller::datasets() const {
  std::lock_guard lock(mu_);
  std::vector<DatasetRecord> out;
  for (const auto& id : dataset_order_) out.push_back(datasets_.at(id));
  return out;
}

// ---- lifecycle ----

JobRecord& Controller::find_job(const std::string& job_id) {
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) throw UnknownJob("no job '" + job_id + "'");
  return it->second;
}

const JobRecord& Controller::find_job(const std::string& job_id) const {
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) throw UnknownJob("no job '" + job_id + "'");
  return it->second;
}

void Controller::set_state(JobRecord& job, JobState to) {
  if (!legal_transition(job.state, to))
    throw std::logic_error(fmt::format("illegal transition {} -> {} for job {}", to_string(job.state), to_string(to),
                                       job.job_id));
  transitions_.push_back({job.job_id, job.state, to});
  spdlog::debug("job {}: {} -> {}", job.job_id, to_string(job.state), to_string(to));
  job.state = to;
}

std::uint64_t Controller::emit(EventKind kind, const std::string& job_id, const std::string& target,
                               ordered_json payload) {
  Event e{next_event_++, kind, job_id, target, std::move(payload)};
  journal({{"event", to_json(e)}});
  events_[e.id] = e;
  events_cv_.notify_all();
  return e.id;
}

std::set<std::string> Controller::managed_targets(const JobRecord& job) const {
  std::set<std::string> out;
  for (const auto& [_, t] : job.tasks)
    if (!t.unmanaged) out.insert(t.compute_id);
  return out;
}

std::string Controller::create_job(const ordered_json& document) {
  auto spec = tag::job_spec_from_json(document);
  auto report = tag::pre_check(spec);
  if (!report.ok()) throw ValidationFailed(std::move(report));
  std::lock_guard lock(mu_);
  JobRecord job;
  do {
    job.job_id = random_job_id();
  } while (jobs_.contains(job.job_id));
  job.document = document;
  job.spec = std::move(spec);
  save_job(job);
  const auto id = job.job_id;
  jobs_[id] = std::move(job);
  maybe_snapshot();
  return id;
}

void Controller::start_job(const std::string& job_id, const std::vector<std::string>& unmanaged) {
  std::lock_guard lock(mu_);
  auto& job = find_job(job_id);
  if (job.state != JobState::Created)
    throw WrongState(fmt::format("job {} is {}, not created", job_id, to_string(job.state)));

  std::vector<ComputeRecord> computes;
  for (const auto& [_, c] : computes_) computes.push_back(c);
  std::vector<DatasetRecord> datasets;
  for (const auto& id : dataset_order_) datasets.push_back(datasets_.at(id));
  auto topology = expansion::expand(job.spec, datasets, computes, job_id);

  std::set<std::string> unmanaged_set(unmanaged.begin(), unmanaged.end());
  for (const auto& w : unmanaged_set) {
    const auto* cfg = topology.find(w);
    if (cfg == nullptr) throw UnknownWorker("no worker '" + w + "' in job " + job_id);
    const auto* role = job.spec.find_role(cfg->role);
    if (role == nullptr || !role->is_data_consumer)
      throw NotUnmanaged("worker '" + w + "' is not a data consumer and cannot be left unmanaged");
  }

  std::map<std::string, std::vector<std::string>> by_compute;
  for (const auto& w : topology.workers) {
    TaskRecord t;
    t.compute_id = w.compute_id;
    t.unmanaged = unmanaged_set.contains(w.worker_id);
    job.tasks[w.worker_id] = t;
    if (!t.unmanaged) by_compute[w.compute_id].push_back(w.worker_id);
  }
  job.topology = std::move(topology);
  set_state(job, JobState::Deploying);
  const auto t = now();
  for (const auto& [worker, _] : job.tasks) last_seen_[{job_id, worker}] = t;
  save_job(job);

  for (const auto& [compute, workers] : by_compute) {
    ordered_json manifests = ordered_json::array();
    for (const auto& w : workers) manifests.push_back("/jobs/" + job_id + "/manifests/" + w);
    emit(EventKind::Deploy, job_id, compute, {{"workers", workers}, {"manifests", manifests}});
  }
  evaluate(job);
  maybe_snapshot();
}

void Controller::evaluate(JobRecord& job) {
  if (is_terminal(job.state) || job.state == JobState::Created) return;
  const auto before = job.state;
  if (job.stop_requested) {
    const bool all_terminal =
        std::all_of(job.tasks.begin(), job.tasks.end(), [](const auto& kv) { return is_terminal(kv.second.status); });
    if (job.pending_revokes.empty() || all_terminal) {
      set_state(job, JobState::Stopped);
      job.pending_revokes.clear();
    }
  } else {
    if (job.state == JobState::Deploying) {
      const bool started = std::all_of(job.tasks.begin(), job.tasks.end(), [](const auto& kv) {
        return kv.second.unmanaged || kv.second.status == TaskStatus::Running || kv.second.status == TaskStatus::Done;
      });
      if (started) set_state(job, JobState::Running);
    }
    if (job.state == JobState::Running) {
      const bool done = std::all_of(job.tasks.begin(), job.tasks.end(),
                                    [](const auto& kv) { return kv.second.status == TaskStatus::Done; });
      if (done) set_state(job, JobState::Completed);
    }
  }
  if (job.state == before) return;
  save_job(job);
  for (const auto& target : managed_targets(job)) {
    if (job.state == JobState::Running) emit(EventKind::JobStart, job.job_id, target, ordered_json::object());
    if (is_terminal(job.state))
      emit(EventKind::JobStop, job.job_id, target, {{"state", to_string(job.state)}});
  }
}

void Controller::fail_job(JobRecord& job, const std::string& reason) {
  job.error = reason;
  set_state(job, JobState::Failed);
  save_job(job);
  for (const auto& target : managed_targets(job))
    emit(EventKind::Revoke, job.job_id, target, {{"reason", reason}});
}

void Controller::update_task_status(const std::string& job_id, const std::string& worker_id, TaskStatus status,
                                    const std::string& detail) {
  std::lock_guard lock(mu_);
  auto& job = find_job(job_id);
  auto it = job.tasks.find(worker_id);
  if (it == job.tasks.end()) throw UnknownWorker("no worker '" + worker_id + "' in job " + job_id);
  auto& task = it->second;
  last_seen_[{job_id, worker_id}] = now();
  if (is_terminal(task.status) || task.status == status) return;
  task.status = status;
  task.detail = detail;
  save_job(job);
  if (is_terminal(job.state)) return;
  const bool failure = status == TaskStatus::Failed || (status == TaskStatus::Terminated && !job.stop_requested);
  if (failure && !job.stop_requested)
    fail_job(job, fmt::format("{} {}{}", worker_id, to_string(status), detail.empty() ? "" : ": " + detail));
  else
    evaluate(job);
  maybe_snapshot();
}

void Controller::stop_job(const std::string& job_id) {
  std::lock_guard lock(mu_);
  auto& job = find_job(job_id);
  if (job.state != JobState::Running && job.state != JobState::Deploying)
    throw WrongState(fmt::format("job {} is {}, cannot stop", job_id, to_string(job.state)));
  if (job.stop_requested) return;
  job.stop_requested = true;
  for (const auto& target : managed_targets(job))
    job.pending_revokes.push_back(emit(EventKind::Revoke, job_id, target, {{"reason", "stop requested"}}));
  save_job(job);
  evaluate(job);
  maybe_snapshot();
}

std::size_t Controller::check_heartbeats() {
  std::lock_guard lock(mu_);
  const auto t = now();
  const auto limit = opts_.heartbeat_period * opts_.missed_heartbeats;
  std::size_t failed = 0;
  for (auto& [id, job] : jobs_) {
    if (is_terminal(job.state) || job.state == JobState::Created) continue;
    for (auto& [worker, task] : job.tasks) {
      if (task.status != TaskStatus::Running && task.status != TaskStatus::Fetching) continue;
      if (t - last_seen_[{id, worker}] <= limit) continue;
      task.status = TaskStatus::Failed;
      task.detail = "heartbeat lost";
      ++failed;
      spdlog::warn("job {}: {} missed {} heartbeats", id, worker, opts_.missed_heartbeats);
      save_job(job);
      if (is_terminal(job.state)) continue;
      if (job.stop_requested)
        evaluate(job);
      else
        fail_job(job, worker + " heartbeat lost");
    }
  }
  maybe_snapshot();
  return failed;
}

JobRecord Controller::job(const std::string& job_id) const {
  std::lock_guard lock(mu_);
  return find_job(job_id);
}

std::vector<std::string> Controller::job_ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, _] : jobs_) out.push_back(id);
  return out;
}

fl::TaskManifest Controller::build_manifest(const JobRecord& job, const std::string& worker_id) const {
  if (!job.topology) throw WrongState("job " + job.job_id + " has not been started");
  if (job.topology->find(worker_id) == nullptr)
    throw UnknownWorker("no worker '" + worker_id + "' in job " + job.job_id);
  std::vector<DatasetRecord> datasets;
  for (const auto& id : dataset_order_) datasets.push_back(datasets_.at(id));
  fl::ManifestOptions mo;
  mo.broker_host = opts_.broker_host;
  mo.broker_port = opts_.broker_port;
  if (!opts_.artifact_root.empty()) mo.artifact_dir = (opts_.artifact_root / job.job_id).string();
  for (auto& m : fl::build_manifests(job.spec, *job.topology, datasets, mo))
    if (m.worker_id == worker_id) return m;
  throw UnknownWorker("no manifest for '" + worker_id + "'");
}

fl::TaskManifest Controller::manifest(const std::string& job_id, const std::string& worker_id) const {
  std::lock_guard lock(mu_);
  return build_manifest(find_job(job_id), worker_id);
}

fl::TaskManifest Controller::claim_slot(const std::string& job_id, const std::string& worker_id) {
  std::lock_guard lock(mu_);
  auto& job = find_job(job_id);
  auto it = job.tasks.find(worker_id);
  if (it == job.tasks.end()) throw UnknownWorker("no worker '" + worker_id + "' in job " + job_id);
  if (!it->second.unmanaged) throw NotUnmanaged("worker '" + worker_id + "' is managed by a deployer");
  if (job.state != JobState::Running)
    throw JobNotRunning(fmt::format("job {} is {}", job_id, to_string(job.state)));
  if (it->second.claimed) throw SlotAlreadyFilled("slot '" + worker_id + "' is already claimed");
  auto manifest = build_manifest(job, worker_id);
  it->second.claimed = true;
  last_seen_[{job_id, worker_id}] = now();
  save_job(job);
  maybe_snapshot();
  return manifest;
}

// ---- events ----

std::vector<Event> Controller::pending_events(const std::string& subscriber, std::uint64_t after) const {
  std::lock_guard lock(mu_);
  std::vector<Event> out;
  for (auto it = events_.upper_bound(after); it != events_.end(); ++it)
    if (it->second.target == subscriber) out.push_back(it->second);
  return out;
}

std::vector<Event> Controller::wait_events(const std::string& subscriber, std::uint64_t after,
                                           std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  std::vector<Event> out;
  events_cv_.wait_for(lock, timeout, [&] {
    for (auto it = events_.upper_bound(after); it != events_.end(); ++it)
      if (it->second.target == subscriber) out.push_back(it->second);
    return !out.empty();
  });
  return out;
}

void Controller::ack(const std::string& subscriber, std::uint64_t event_id) {
  std::lock_guard lock(mu_);
  auto it = events_.find(event_id);
  if (it == events_.end() || it->second.target != subscriber) return;
  const auto job_id = it->second.job_id;
  journal({{"ack", event_id}});
  events_.erase(it);
  auto jt = jobs_.find(job_id);
  if (jt == jobs_.end()) {
    maybe_snapshot();
    return;
  }
  auto& revokes = jt->second.pending_revokes;
  if (auto r = std::find(revokes.begin(), revokes.end(), event_id); r != revokes.end()) {
    revokes.erase(r);
    save_job(jt->second);
    evaluate(jt->second);
  }
  maybe_snapshot();
}

std::vector<Transition> Controller::transitions() const {
  std::lock_guard lock(mu_);
  return transitions_;
}

}  // namespace flame::control
