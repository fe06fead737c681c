// SPDX-License-Identifier: Apache-2.0
#include "flame/expansion/expand.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <set>
#include <tuple>

#include "flame/expansion/realm.hpp"

namespace flame::expansion {

ComputePlacer::ComputePlacer(std::span<const ComputeRecord> computes)
    : computes_(computes.begin(), computes.end()) {
  std::sort(computes_.begin(), computes_.end(),
            [](const auto& a, const auto& b) { return a.compute_id < b.compute_id; });
}

std::string ComputePlacer::decide(const std::optional<std::string>& realm, const std::string& subject) {
  std::vector<const ComputeRecord*> best;
  std::size_t best_depth = 0;
  for (const auto& c : computes_) {
    if (realm && !realm_admits(c.realm, *realm)) continue;
    auto depth = realm_depth(c.realm);
    if (best.empty() || depth > best_depth) {
      best.clear();
      best_depth = depth;
    }
    if (depth == best_depth) best.push_back(&c);
  }
  if (best.empty())
    throw NoComputeForRealm(subject + ": no registered compute admits realm '" +
                            realm.value_or("*") + "'");
  if (best.size() == 1) return best.front()->compute_id;
  std::string key;
  for (const auto* c : best) key += c->compute_id + ",";
  ++shared_[key];
  auto& cursor = cursor_[key];
  return best[cursor++ % best.size()]->compute_id;
}

std::vector<std::string> ComputePlacer::notes() const {
  std::vector<std::string> out;
  for (const auto& [key, n] : shared_) {
    auto set = key.substr(0, key.size() - 1);
    out.push_back(std::to_string(n) + " worker(s) placed round-robin over {" + set + "}");
  }
  return out;
}

DatasetIndex::DatasetIndex(std::span<const DatasetRecord> datasets) {
  for (const auto& d : datasets) by_id_.emplace(d.dataset_id, &d);
}

const DatasetRecord& DatasetIndex::at(const std::string& dataset_id) const {
  auto it = by_id_.find(dataset_id);
  if (it == by_id_.end()) throw UnregisteredDataset("dataset '" + dataset_id + "' is not registered");
  return *it->second;
}

namespace {

std::string worker_id(const std::string& role, std::size_t index) {
  return role + "-" + std::to_string(index);
}

std::map<std::string, std::string> bindings_for_group(const tag::RoleSpec& role,
                                                      const tag::JobSpec& spec,
                                                      const std::string& group) {
  if (role.group_association.empty()) {
    std::map<std::string, std::string> implicit;
    for (const auto* ch : spec.incident_channels(role.name)) implicit[ch->name] = group;
    return implicit;
  }
  for (const auto& entry : role.group_association)
    for (const auto& [ch, g] : entry)
      if (g == group) return entry;
  throw MissingGroupAssociation("role '" + role.name + "' has no groupAssociation entry for group '" +
                                group + "'");
}

}  // namespace

std::vector<WorkerConfig> build_workers_data_consumer(const tag::RoleSpec& role,
                                                      const tag::JobSpec& spec,
                                                      const DatasetIndex& datasets,
                                                      ComputePlacer& placer) {
  std::vector<WorkerConfig> out;
  out.reserve(spec.dataset_count());
  for (const auto& group : spec.dataset_groups) {
    if (group.dataset_ids.empty()) continue;
    const auto bindings = bindings_for_group(role, spec, group.label);
    for (const auto& id : group.dataset_ids) {
      const auto& record = datasets.at(id);
      WorkerConfig w;
      w.worker_id = worker_id(role.name, out.size());
      w.role = role.name;
      w.compute_id = placer.decide(record.realm, "dataset " + id);
      w.channel_bindings = bindings;
      w.dataset_ref = id;
      w.program = role.program;
      out.push_back(std::move(w));
    }
  }
  return out;
}

std::vector<WorkerConfig> build_workers_general(const tag::RoleSpec& role) {
  std::vector<WorkerConfig> out;
  out.reserve(role.group_association.size() * static_cast<std::size_t>(std::max(role.replica, 0)));
  for (const auto& entry : role.group_association) {
    for (int i = 0; i < role.replica; ++i) {
      WorkerConfig w;
      w.worker_id = worker_id(role.name, out.size());
      w.role = role.name;
      w.channel_bindings = entry;
      w.program = role.program;
      out.push_back(std::move(w));
    }
  }
  return out;
}

namespace {

constexpr std::size_t kUnreachable = std::numeric_limits<std::size_t>::max();

// Hop distance of every role from the data-consuming role in the TAG.
std::map<std::string, std::size_t> distances_from_data(const tag::JobSpec& spec) {
  std::map<std::string, std::size_t> dist;
  for (const auto& r : spec.roles) dist[r.name] = kUnreachable;
  std::deque<std::string> queue;
  if (const auto* dc = spec.data_consumer()) {
    dist[dc->name] = 0;
    queue.push_back(dc->name);
  }
  while (!queue.empty()) {
    auto role = queue.front();
    queue.pop_front();
    for (const auto* ch : spec.incident_channels(role)) {
      const auto& next = ch->other_end(role);
      auto it = dist.find(next);
      if (it != dist.end() && it->second == kUnreachable) {
        it->second = dist[role] + 1;
        queue.push_back(next);
      }
    }
  }
  return dist;
}

using BucketKey = std::tuple<std::string, std::string, std::string>;  // channel, group, role

void fold_realm(std::map<BucketKey, std::string>& buckets, const WorkerConfig& w,
                const std::string& realm) {
  for (const auto& [ch, group] : w.channel_bindings) {
    auto [it, inserted] = buckets.try_emplace({ch, group, w.role}, realm);
    if (!inserted) it->second = common_realm(it->second, realm);
  }
}

}  // namespace

PhysicalTopology expand(const tag::JobSpec& spec, std::span<const DatasetRecord> datasets,
                        std::span<const ComputeRecord> computes, const std::string& job_id) {
  if (auto report = tag::pre_check(spec); !report.ok()) throw PreCheckFailed(std::move(report));

  PhysicalTopology topo;
  topo.job_id = job_id;
  for (const auto& c : spec.channels) topo.channels.push_back({c.name, c.pair});

  DatasetIndex index(datasets);
  ComputePlacer placer(computes);
  const auto dist = distances_from_data(spec);

  // Roles are processed by distance from the data so that every worker's
  // peer realms are known before it is placed. The output order is by role
  // name, which keeps the result independent of declaration order.
  std::vector<const tag::RoleSpec*> roles;
  for (const auto& r : spec.roles) roles.push_back(&r);
  std::sort(roles.begin(), roles.end(), [&](const auto* a, const auto* b) {
    return std::tie(dist.at(a->name), a->name) < std::tie(dist.at(b->name), b->name);
  });

  std::map<std::string, std::vector<WorkerConfig>> by_role;
  std::map<BucketKey, std::string> bucket_realm;
  for (const auto* role : roles) {
    auto& workers = by_role[role->name];
    if (role->is_data_consumer) {
      workers = build_workers_data_consumer(*role, spec, index, placer);
      for (const auto& w : workers) fold_realm(bucket_realm, w, index.at(*w.dataset_ref).realm);
      continue;
    }
    workers = build_workers_general(*role);
    const auto my_dist = dist.at(role->name);
    std::vector<std::optional<std::string>> realms;
    for (auto& w : workers) {
      std::optional<std::string> realm;
      for (const auto& [ch_name, group] : w.channel_bindings) {
        const auto* ch = spec.find_channel(ch_name);
        const auto& peer_role = ch->other_end(role->name);
        if (dist.at(peer_role) >= my_dist) continue;
        auto it = bucket_realm.find({ch_name, group, peer_role});
        if (it == bucket_realm.end()) continue;
        realm = realm ? common_realm(*realm, it->second) : it->second;
      }
      w.compute_id = placer.decide(realm, "worker " + w.worker_id);
      realms.push_back(realm);
    }
    for (std::size_t i = 0; i < workers.size(); ++i)
      if (realms[i]) fold_realm(bucket_realm, workers[i], *realms[i]);
  }

  for (auto& [name, workers] : by_role)
    for (auto& w : workers) topo.workers.push_back(std::move(w));
  topo.placement_notes = placer.notes();

  if (auto report = post_check(topo, spec); !report.ok()) throw PostCheckFailed(std::move(report));
  return topo;
}

tag::ValidationReport post_check(const PhysicalTopology& topology, const tag::JobSpec& spec) {
  namespace codes = tag::codes;
  tag::ValidationReport report;

  std::set<std::string> ids;
  std::map<std::string, std::size_t> per_role;
  for (const auto& w : topology.workers) {
    if (!ids.insert(w.worker_id).second)
      report.add(std::string(codes::kDuplicateWorker), w.worker_id, "worker id used twice");
    ++per_role[w.role];
    const auto* role = spec.find_role(w.role);
    if (role == nullptr) {
      report.add(std::string(codes::kUnknownRole), w.worker_id, "role '" + w.role + "' not in spec");
      continue;
    }
    if (w.dataset_ref.has_value() != role->is_data_consumer)
      report.add(std::string(codes::kDatasetRefMismatch), w.worker_id,
                 role->is_data_consumer ? "data consumer without dataset" : "dataset on non-consumer");
    const auto incident = spec.incident_channels(w.role);
    bool exact = incident.size() == w.channel_bindings.size();
    for (const auto* ch : incident) exact = exact && w.channel_bindings.contains(ch->name);
    if (!exact)
      report.add(std::string(codes::kBindingMismatch), w.worker_id,
                 "bindings do not cover exactly the incident channels");
    for (const auto& [ch_name, group] : w.channel_bindings) {
      const auto* ch = spec.find_channel(ch_name);
      if (ch != nullptr && !ch->admits_group(group))
        report.add(std::string(codes::kGroupNotInGroupBy), w.worker_id,
                   "group '" + group + "' not in groupBy of '" + ch_name + "'");
    }
  }

  for (const auto& role : spec.roles) {
    std::size_t expected = role.is_data_consumer
                               ? spec.dataset_count()
                               : role.group_association.size() * static_cast<std::size_t>(role.replica);
    std::size_t actual = per_role.contains(role.name) ? per_role[role.name] : 0;
    if (actual != expected)
      report.add(std::string(codes::kWorkerCountMismatch), role.name,
                 "expected " + std::to_string(expected) + " workers, found " + std::to_string(actual));
  }

  // Every group in use on a channel needs a worker on both ends.
  for (const auto& ch : spec.channels) {
    std::map<std::string, std::set<std::string>> roles_in_group;
    for (const auto& w : topology.workers) {
      auto it = w.channel_bindings.find(ch.name);
      if (it != w.channel_bindings.end() && ch.is_incident(w.role)) roles_in_group[it->second].insert(w.role);
    }
    for (const auto& [group, roles] : roles_in_group)
      for (const auto* end : {&ch.pair.first, &ch.pair.second})
        if (!roles.contains(*end))
          report.add(std::string(codes::kEmptyChannelSide), ch.name + "/" + group,
                     "no '" + *end + "' worker in group '" + group + "'");
  }
  return report;
}

}  // namespace flame::expansion
