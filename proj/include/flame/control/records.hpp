// SPDX-License-Identifier: Apache-2.0
// Persistent records of the control plane and their JSON forms.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "flame/common/resources.hpp"
#include "flame/expansion/topology.hpp"
#include "flame/tag/job_spec.hpp"

namespace flame::control {

using ordered_json = nlohmann::ordered_json;

enum class JobState { Created, Deploying, Running, Completed, Failed, Stopped };
enum class TaskStatus { Pending, Fetching, Running, Done, Failed, Terminated };
enum class EventKind { Deploy, Revoke, JobStart, JobStop };

std::string_view to_string(JobState s);
std::string_view to_string(TaskStatus s);
std::string_view to_string(EventKind k);
std::optional<JobState> job_state_from_string(std::string_view s);
std::optional<TaskStatus> task_status_from_string(std::string_view s);
std::optional<EventKind> event_kind_from_string(std::string_view s);

// created -> deploying -> running -> {completed, failed, stopped}; a job may
// also fail or be stopped while deploying.
bool legal_transition(JobState from, JobState to);
bool is_terminal(JobState s);
bool is_terminal(TaskStatus s);

struct Event {
  std::uint64_t id = 0;
  EventKind kind = EventKind::Deploy;
  std::string job_id;
  std::string target;  // subscriber id: a deployer (compute id)
  ordered_json payload = ordered_json::object();

  bool operator==(const Event&) const = default;
};

struct TaskRecord {
  TaskStatus status = TaskStatus::Pending;
  std::string compute_id;
  bool unmanaged = false;
  bool claimed = false;
  std::string detail;

  bool operator==(const TaskRecord&) const = default;
};

struct JobRecord {
  std::string job_id;
  ordered_json document;  // the submitted spec document
  tag::JobSpec spec;
  std::optional<expansion::PhysicalTopology> topology;
  JobState state = JobState::Created;
  std::map<std::string, TaskRecord> tasks;
  bool stop_requested = false;
  std::vector<std::uint64_t> pending_revokes;
  std::string error;

  bool operator==(const JobRecord&) const = default;
};

ordered_json to_json(const ComputeRecord& c);
ordered_json to_json(const DatasetRecord& d);
ordered_json to_json(const Event& e);
ordered_json to_json(const JobRecord& j);
ComputeRecord compute_from_json(const ordered_json& doc);
DatasetRecord dataset_from_json(const ordered_json& doc);
Event event_from_json(const ordered_json& doc);
JobRecord job_from_json(const ordered_json& doc);

// Status view: state plus per-task statuses, without spec or topology.
ordered_json job_status_json(const JobRecord& j);

}  // namespace flame::control
