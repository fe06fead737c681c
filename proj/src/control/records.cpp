// SPDX-License-Identifier: Apache-2.0
#include "flame/control/records.hpp"

#include <array>
#include <utility>

#include "flame/tag/json.hpp"

namespace flame::control {

namespace {

template <typename E, std::size_t N>
std::optional<E> lookup(const std::array<std::pair<E, std::string_view>, N>& table, std::string_view s) {
  for (const auto& [e, name] : table)
    if (name == s) return e;
  return std::nullopt;
}

template <typename E, std::size_t N>
std::string_view name_of(const std::array<std::pair<E, std::string_view>, N>& table, E e) {
  for (const auto& [v, name] : table)
    if (v == e) return name;
  return "?";
}

constexpr std::array<std::pair<JobState, std::string_view>, 6> kJobStates{{
    {JobState::Created, "created"},
    {JobState::Deploying, "deploying"},
    {JobState::Running, "running"},
    {JobState::Completed, "completed"},
    {JobState::Failed, "failed"},
    {JobState::Stopped, "stopped"},
}};

constexpr std::array<std::pair<TaskStatus, std::string_view>, 6> kTaskStatuses{{
    {TaskStatus::Pending, "pending"},
    {TaskStatus::Fetching, "fetching"},
    {TaskStatus::Running, "running"},
    {TaskStatus::Done, "done"},
    {TaskStatus::Failed, "failed"},
    {TaskStatus::Terminated, "terminated"},
}};

constexpr std::array<std::pair<EventKind, std::string_view>, 4> kEventKinds{{
    {EventKind::Deploy, "deploy"},
    {EventKind::Revoke, "revoke"},
    {EventKind::JobStart, "job-start"},
    {EventKind::JobStop, "job-stop"},
}};

template <typename T>
T required(const ordered_json& doc, const char* key) {
  if (!doc.is_object() || !doc.contains(key)) throw tag::SchemaError(std::string("missing field '") + key + "'");
  try {
    return doc.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw tag::SchemaError(std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace

std::string_view to_string(JobState s) { return name_of(kJobStates, s); }
std::string_view to_string(TaskStatus s) { return name_of(kTaskStatuses, s); }
std::string_view to_string(EventKind k) { return name_of(kEventKinds, k); }
std::optional<JobState> job_state_from_string(std::string_view s) { return lookup(kJobStates, s); }
std::optional<TaskStatus> task_status_from_string(std::string_view s) { return lookup(kTaskStatuses, s); }
std::optional<EventKind> event_kind_from_string(std::string_view s) { return lookup(kEventKinds, s); }

bool legal_transition(JobState from, JobState to) {
  switch (from) {
    case JobState::Created:
      return to == JobState::Deploying;
    case JobState::Deploying:
      return to == JobState::Running || to == JobState::Failed || to == JobState::Stopped;
    case JobState::Running:
      return to == JobState::Completed || to == JobState::Failed || to == JobState::Stopped;
    default:
      return false;
  }
}

bool is_terminal(JobState s) {
  return s == JobState::Completed || s == JobState::Failed || s == JobState::Stopped;
}

bool is_terminal(TaskStatus s) {
  return s == TaskStatus::Done || s == TaskStatus::Failed || s == TaskStatus::Terminated;
}

ordered_json to_json(const ComputeRecord& c) {
  return {{"computeId", c.compute_id}, {"realm", c.realm}, {"endpoint", c.endpoint}, {"capacity", c.capacity}};
}

ordered_json to_json(const DatasetRecord& d) {
  return {{"datasetId", d.dataset_id}, {"realm", d.realm}, {"url", d.url}, {"owner", d.owner}};
}

ordered_json to_json(const Event& e) {
  return {{"id", e.id}, {"kind", to_string(e.kind)}, {"jobId", e.job_id}, {"target", e.target}, {"payload", e.payload}};
}

ComputeRecord compute_from_json(const ordered_json& doc) {
  ComputeRecord c;
  c.compute_id = required<std::string>(doc, "computeId");
  c.realm = required<std::string>(doc, "realm");
  c.endpoint = doc.value("endpoint", "");
  c.capacity = doc.value("capacity", 1);
  return c;
}

DatasetRecord dataset_from_json(const ordered_json& doc) {
  DatasetRecord d;
  d.dataset_id = required<std::string>(doc, "datasetId");
  d.realm = required<std::string>(doc, "realm");
  d.url = required<std::string>(doc, "url");
  d.owner = doc.value("owner", "");
  return d;
}

Event event_from_json(const ordered_json& doc) {
  Event e;
  e.id = required<std::uint64_t>(doc, "id");
  const auto kind = event_kind_from_string(required<std::string>(doc, "kind"));
  if (!kind) throw tag::SchemaError("unknown event kind");
  e.kind = *kind;
  e.job_id = required<std::string>(doc, "jobId");
  e.target = required<std::string>(doc, "target");
  e.payload = doc.value("payload", ordered_json::object());
  return e;
}

ordered_json to_json(const JobRecord& j) {
  ordered_json tasks = ordered_json::object();
  for (const auto& [id, t] : j.tasks)
    tasks[id] = {{"status", to_string(t.status)}, {"computeId", t.compute_id}, {"unmanaged", t.unmanaged},
                 {"claimed", t.claimed}, {"detail", t.detail}};
  ordered_json doc{{"jobId", j.job_id},       {"state", to_string(j.state)},
                   {"document", j.document},  {"tasks", tasks},
                   {"stopRequested", j.stop_requested}, {"pendingRevokes", j.pending_revokes},
                   {"error", j.error}};
  doc["topology"] = j.topology ? expansion::topology_to_json(*j.topology) : ordered_json(nullptr);
  return doc;
}

JobRecord job_from_json(const ordered_json& doc) {
  JobRecord j;
  j.job_id = required<std::string>(doc, "jobId");
  const auto state = job_state_from_string(required<std::string>(doc, "state"));
  if (!state) throw tag::SchemaError("unknown job state");
  j.state = *state;
  j.document = doc.at("document");
  j.spec = tag::job_spec_from_json(j.document);
  for (const auto& [id, t] : doc.at("tasks").items()) {
    TaskRecord rec;
    const auto status = task_status_from_string(t.at("status").get<std::string>());
    if (!status) throw tag::SchemaError("unknown task status");
    rec.status = *status;
    rec.compute_id = t.value("computeId", "");
    rec.unmanaged = t.value("unmanaged", false);
    rec.claimed = t.value("claimed", false);
    rec.detail = t.value("detail", "");
    j.tasks[id] = rec;
  }
  j.stop_requested = doc.value("stopRequested", false);
  j.pending_revokes = doc.value("pendingRevokes", std::vector<std::uint64_t>{});
  j.error = doc.value("error", "");
  if (!doc.at("topology").is_null()) j.topology = expansion::topology_from_json(doc.at("topology"));
  return j;
}

ordered_json job_status_json(const JobRecord& j) {
  ordered_json tasks = ordered_json::object();
  for (const auto& [id, t] : j.tasks) {
    ordered_json row{{"status", to_string(t.status)}, {"computeId", t.compute_id}};
    if (t.unmanaged) row["unmanaged"] = true;
    if (!t.detail.empty()) row["detail"] = t.detail;
    tasks[id] = row;
  }
  ordered_json doc{{"jobId", j.job_id}, {"name", j.spec.job_name}, {"state", to_string(j.state)}, {"tasks", tasks}};
  if (j.stop_requested) doc["stopRequested"] = true;
  if (!j.error.empty()) doc["error"] = j.error;
  return doc;
}

}  // namespace flame::control
