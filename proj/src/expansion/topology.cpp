// SPDX-License-Identifier: Apache-2.0
#include "flame/expansion/topology.hpp"

#include <sstream>

namespace flame::expansion {

const WorkerConfig* PhysicalTopology::find(const std::string& worker_id) const {
  for (const auto& w : workers)
    if (w.worker_id == worker_id) return &w;
  return nullptr;
}

std::vector<Edge> PhysicalTopology::edges() const {
  std::vector<Edge> out;
  for (const auto& ch : channels) {
    // group -> (first-end workers, second-end workers)
    std::map<std::string, std::pair<std::vector<const WorkerConfig*>, std::vector<const WorkerConfig*>>> groups;
    for (const auto& w : workers) {
      auto it = w.channel_bindings.find(ch.name);
      if (it == w.channel_bindings.end()) continue;
      auto& sides = groups[it->second];
      if (w.role == ch.pair.first)
        sides.first.push_back(&w);
      else if (w.role == ch.pair.second)
        sides.second.push_back(&w);
    }
    const bool self = ch.pair.first == ch.pair.second;
    for (const auto& [group, sides] : groups) {
      if (self) {
        const auto& ws = sides.first;
        for (std::size_t i = 0; i < ws.size(); ++i)
          for (std::size_t j = i + 1; j < ws.size(); ++j)
            out.push_back({ws[i]->worker_id, ws[j]->worker_id, ch.name, group});
      } else {
        for (const auto* a : sides.first)
          for (const auto* b : sides.second) out.push_back({a->worker_id, b->worker_id, ch.name, group});
      }
    }
  }
  return out;
}

std::vector<std::string> PhysicalTopology::peers(const std::string& worker_id,
                                                 const std::string& channel) const {
  const auto* me = find(worker_id);
  if (me == nullptr) return {};
  auto binding = me->channel_bindings.find(channel);
  if (binding == me->channel_bindings.end()) return {};
  const ChannelLink* link = nullptr;
  for (const auto& c : channels)
    if (c.name == channel) link = &c;
  if (link == nullptr) return {};
  const auto& other_role = link->pair.first == me->role ? link->pair.second : link->pair.first;
  std::vector<std::string> out;
  for (const auto& w : workers) {
    if (w.worker_id == worker_id || w.role != other_role) continue;
    auto it = w.channel_bindings.find(channel);
    if (it != w.channel_bindings.end() && it->second == binding->second) out.push_back(w.worker_id);
  }
  return out;
}

nlohmann::ordered_json topology_to_json(const PhysicalTopology& topo, bool with_edges) {
  nlohmann::ordered_json doc;
  doc["jobId"] = topo.job_id;
  doc["channels"] = nlohmann::ordered_json::array();
  for (const auto& c : topo.channels)
    doc["channels"].push_back({{"name", c.name}, {"pair", {c.pair.first, c.pair.second}}});
  doc["workers"] = nlohmann::ordered_json::array();
  for (const auto& w : topo.workers) {
    nlohmann::ordered_json wj;
    wj["workerId"] = w.worker_id;
    wj["role"] = w.role;
    wj["computeId"] = w.compute_id;
    wj["program"] = w.program;
    wj["channelBindings"] = nlohmann::ordered_json::object();
    for (const auto& [ch, g] : w.channel_bindings) wj["channelBindings"][ch] = g;
    if (w.dataset_ref) wj["datasetRef"] = *w.dataset_ref;
    doc["workers"].push_back(std::move(wj));
  }
  doc["placementNotes"] = topo.placement_notes;
  if (with_edges) {
    doc["edges"] = nlohmann::ordered_json::array();
    for (const auto& e : topo.edges())
      doc["edges"].push_back({{"a", e.a}, {"b", e.b}, {"channel", e.channel}, {"group", e.group}});
  }
  return doc;
}

PhysicalTopology topology_from_json(const nlohmann::ordered_json& doc) {
  PhysicalTopology topo;
  topo.job_id = doc.at("jobId").get<std::string>();
  for (const auto& c : doc.at("channels"))
    topo.channels.push_back({c.at("name").get<std::string>(),
                             {c.at("pair").at(0).get<std::string>(), c.at("pair").at(1).get<std::string>()}});
  for (const auto& wj : doc.at("workers")) {
    WorkerConfig w;
    w.worker_id = wj.at("workerId").get<std::string>();
    w.role = wj.at("role").get<std::string>();
    w.compute_id = wj.at("computeId").get<std::string>();
    w.program = wj.at("program").get<std::string>();
    for (const auto& [ch, g] : wj.at("channelBindings").items()) w.channel_bindings[ch] = g.get<std::string>();
    if (auto it = wj.find("datasetRef"); it != wj.end()) w.dataset_ref = it->get<std::string>();
    topo.workers.push_back(std::move(w));
  }
  if (auto it = doc.find("placementNotes"); it != doc.end())
    topo.placement_notes = it->get<std::vector<std::string>>();
  return topo;
}

std::string topology_to_dot(const PhysicalTopology& topo) {
  std::ostringstream os;
  os << "graph \"" << (topo.job_id.empty() ? "topology" : topo.job_id) << "\" {\n";
  for (const auto& w : topo.workers)
    os << "  \"" << w.worker_id << "\" [label=\"" << w.worker_id << "\\n" << w.compute_id << "\"];\n";
  for (const auto& e : topo.edges())
    os << "  \"" << e.a << "\" -- \"" << e.b << "\" [label=\"" << e.channel << "/" << e.group << "\"];\n";
  os << "}\n";
  return os.str();
}

}  // namespace flame::expansion
