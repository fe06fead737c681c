// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace flame::expansion {

struct WorkerConfig {
  std::string worker_id;  // "<role>-<index>"
  std::string role;
  std::string compute_id;
  std::map<std::string, std::string> channel_bindings;  // channel -> group
  std::optional<std::string> dataset_ref;
  std::string program;

  bool operator==(const WorkerConfig&) const = default;
};

struct ChannelLink {
  std::string name;
  std::pair<std::string, std::string> pair;

  bool operator==(const ChannelLink&) const = default;
};

struct Edge {
  std::string a;
  std::string b;
  std::string channel;
  std::string group;

  bool operator==(const Edge&) const = default;
};

struct PhysicalTopology {
  std::string job_id;
  std::vector<ChannelLink> channels;
  std::vector<WorkerConfig> workers;
  std::vector<std::string> placement_notes;

  const WorkerConfig* find(const std::string& worker_id) const;

  // Two workers are linked on channel c iff both bind c to the same group
  // and sit on opposite ends of c (any two distinct workers on a
  // self-channel). Derived on demand, never stored.
  std::vector<Edge> edges() const;

  // Peers of `worker_id` on `channel`, i.e. the other end of its edges there.
  std::vector<std::string> peers(const std::string& worker_id, const std::string& channel) const;

  bool operator==(const PhysicalTopology&) const = default;
};

nlohmann::ordered_json topology_to_json(const PhysicalTopology& topo, bool with_edges = false);
PhysicalTopology topology_from_json(const nlohmann::ordered_json& doc);
std::string topology_to_dot(const PhysicalTopology& topo);

}  // namespace flame::expansion
