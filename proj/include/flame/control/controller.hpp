// SPDX-License-Identifier: Apache-2.0
// Job lifecycle, resource registry and event queue. Every mutation is
// serialized under one lock and journaled before it becomes visible.
#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "flame/control/records.hpp"
#include "flame/control/store.hpp"
#include "flame/fl/manifest.hpp"
#include "flame/tag/validation.hpp"

namespace flame::control {

FLAME_DEFINE_ERROR(DuplicateCompute);
FLAME_DEFINE_ERROR(DuplicateDataset);
FLAME_DEFINE_ERROR(UnknownJob);
FLAME_DEFINE_ERROR(UnknownWorker);
FLAME_DEFINE_ERROR(WrongState);
FLAME_DEFINE_ERROR(SlotAlreadyFilled);
FLAME_DEFINE_ERROR(JobNotRunning);
FLAME_DEFINE_ERROR(NotUnmanaged);

class ValidationFailed : public Error {
 public:
  explicit ValidationFailed(tag::ValidationReport report)
      : Error("ValidationFailed", report.summary()), report_(std::move(report)) {}
  const tag::ValidationReport& report() const { return report_; }

 private:
  tag::ValidationReport report_;
};

using Clock = std::chrono::steady_clock;

struct ControllerOptions {
  std::filesystem::path store_dir;  // empty: in-memory only
  std::size_t snapshot_every = 256;
  std::string broker_host = "127.0.0.1";
  std::uint16_t broker_port = 0;
  std::filesystem::path artifact_root;  // manifests get <root>/<job_id>
  std::chrono::milliseconds heartbeat_period{2000};
  int missed_heartbeats = 5;
  std::function<Clock::time_point()> clock;
};

struct Transition {
  std::string job_id;
  JobState from;
  JobState to;
};

class Controller {
 public:
  explicit Controller(ControllerOptions opts = {});

  std::string register_compute(ComputeRecord record);
  std::string register_dataset(DatasetRecord record);
  std::vector<ComputeRecord> computes() const;
  std::vector<DatasetRecord> datasets() const;

  std::string create_job(const ordered_json& document);
  // `unmanaged` names data-consumer workers left for participants to start.
  void start_job(const std::string& job_id, const std::vector<std::string>& unmanaged = {});
  void update_task_status(const std::string& job_id, const std::string& worker_id, TaskStatus status,
                          const std::string& detail = {});
  void stop_job(const std::string& job_id);

  JobRecord job(const std::string& job_id) const;
  std::vector<std::string> job_ids() const;
  fl::TaskManifest manifest(const std::string& job_id, const std::string& worker_id) const;
  fl::TaskManifest claim_slot(const std::string& job_id, const std::string& worker_id);

  // Unacknowledged events for `subscriber` with id > `after`.
  std::vector<Event> pending_events(const std::string& subscriber, std::uint64_t after = 0) const;
  // Blocks until such events exist or the timeout passes.
  std::vector<Event> wait_events(const std::string& subscriber, std::uint64_t after,
                                 std::chrono::milliseconds timeout) const;
  void ack(const std::string& subscriber, std::uint64_t event_id);

  // Fails running tasks whose last report is older than the allowed number of
  // heartbeat periods. Returns how many were failed.
  std::size_t check_heartbeats();

  // Transitions performed by this instance, in order.
  std::vector<Transition> transitions() const;

 private:
  Clock::time_point now() const;
  void load();
  ordered_json state_json() const;
  void journal(ordered_json entry);
  void maybe_snapshot();
  void save_job(const JobRecord& job);
  JobRecord& find_job(const std::string& job_id);
  const JobRecord& find_job(const std::string& job_id) const;
  void set_state(JobRecord& job, JobState to);
  std::uint64_t emit(EventKind kind, const std::string& job_id, const std::string& target, ordered_json payload);
  void evaluate(JobRecord& job);
  void fail_job(JobRecord& job, const std::string& reason);
  std::set<std::string> managed_targets(const JobRecord& job) const;
  fl::TaskManifest build_manifest(const JobRecord& job, const std::string& worker_id) const;

  ControllerOptions opts_;
  mutable std::mutex mu_;
  mutable std::condition_variable events_cv_;
  Store store_;
  std::map<std::string, ComputeRecord> computes_;
  std::map<std::string, DatasetRecord> datasets_;
  std::vector<std::string> dataset_order_;
  std::map<std::string, JobRecord> jobs_;
  std::map<std::uint64_t, Event> events_;
  std::uint64_t next_event_ = 1;
  std::map<std::pair<std::string, std::string>, Clock::time_point> last_seen_;
  std::vector<Transition> transitions_;
};

}  // namespace flame::control
