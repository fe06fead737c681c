// SPDX-License-Identifier: Apache-2.0
#include "flame/fl/manifest.hpp"

#include <algorithm>

namespace flame::fl {

using nlohmann::ordered_json;

bool ManifestChannel::has_tag(const std::string& t) const {
  return std::find(func_tags.begin(), func_tags.end(), t) != func_tags.end();
}

double TaskManifest::hyper(const std::string& key, double fallback) const {
  auto it = hyperparams.find(key);
  return it == hyperparams.end() ? fallback : it->second;
}

const ManifestChannel* TaskManifest::channel(const std::string& name) const {
  for (const auto& c : channels)
    if (c.name == name) return &c;
  return nullptr;
}

const ManifestChannel* TaskManifest::channel_with_tag(const std::string& tag) const {
  for (const auto& c : channels)
    if (c.has_tag(tag)) return &c;
  return nullptr;
}

std::vector<const DirectoryEntry*> TaskManifest::workers_with_role(const std::string& r) const {
  std::vector<const DirectoryEntry*> out;
  for (const auto& e : directory)
    if (e.role == r) out.push_back(&e);
  return out;
}

const DirectoryEntry* TaskManifest::entry(const std::string& id) const {
  for (const auto& e : directory)
    if (e.worker_id == id) return &e;
  return nullptr;
}

ordered_json manifest_to_json(const TaskManifest& m) {
  ordered_json doc;
  doc["jobId"] = m.job_id;
  doc["workerId"] = m.worker_id;
  doc["role"] = m.role;
  doc["program"] = m.program;
  if (m.dataset_id) doc["datasetId"] = *m.dataset_id;
  if (m.dataset_url) doc["datasetUrl"] = *m.dataset_url;
  doc["hyperparams"] = ordered_json::object();
  for (const auto& [k, v] : m.hyperparams) doc["hyperparams"][k] = v;
  doc["channels"] = ordered_json::array();
  for (const auto& c : m.channels) {
    ordered_json j;
    j["name"] = c.name;
    j["pair"] = {c.pair.first, c.pair.second};
    j["group"] = c.group;
    j["backend"] = std::string(tag::to_string(c.backend));
    j["bandwidth"] = ordered_json::array();
    for (const auto& [pattern, bps] : c.bandwidth) j["bandwidth"].push_back({pattern, bps});
    j["funcTags"] = c.func_tags;
    j["peers"] = c.peers;
    doc["channels"].push_back(j);
  }
  doc["directory"] = ordered_json::array();
  for (const auto& e : m.directory)
    doc["directory"].push_back({{"workerId", e.worker_id}, {"role", e.role}, {"program", e.program},
                                {"bindings", e.bindings}});
  doc["links"] = ordered_json::array();
  for (const auto& l : m.links) doc["links"].push_back({{"name", l.name}, {"pair", {l.pair.first, l.pair.second}}});
  doc["broker"] = {{"host", m.broker_host}, {"port", m.broker_port}};
  doc["artifactDir"] = m.artifact_dir;
  return doc;
}

TaskManifest manifest_from_json(const ordered_json& doc) {
  try {
    TaskManifest m;
    m.job_id = doc.at("jobId").get<std::string>();
    m.worker_id = doc.at("workerId").get<std::string>();
    m.role = doc.at("role").get<std::string>();
    m.program = doc.at("program").get<std::string>();
    if (doc.contains("datasetId")) m.dataset_id = doc["datasetId"].get<std::string>();
    if (doc.contains("datasetUrl")) m.dataset_url = doc["datasetUrl"].get<std::string>();
    for (const auto& [k, v] : doc.at("hyperparams").items()) m.hyperparams[k] = v.get<double>();
    for (const auto& j : doc.at("channels")) {
      ManifestChannel c;
      c.name = j.at("name").get<std::string>();
      c.pair = {j.at("pair").at(0).get<std::string>(), j.at("pair").at(1).get<std::string>()};
      c.group = j.at("group").get<std::string>();
      auto kind = tag::backend_from_string(j.at("backend").get<std::string>());
      if (!kind) throw BadManifest("unknown backend in channel '" + c.name + "'");
      c.backend = *kind;
      for (const auto& b : j.at("bandwidth")) c.bandwidth.emplace_back(b.at(0).get<std::string>(), b.at(1).get<double>());
      c.func_tags = j.at("funcTags").get<std::vector<std::string>>();
      c.peers = j.at("peers").get<std::vector<std::string>>();
      m.channels.push_back(std::move(c));
    }
    for (const auto& j : doc.at("directory"))
      m.directory.push_back({j.at("workerId").get<std::string>(), j.at("role").get<std::string>(),
                             j.at("program").get<std::string>(),
                             j.at("bindings").get<std::map<std::string, std::string>>()});
    for (const auto& j : doc.at("links"))
      m.links.push_back({j.at("name").get<std::string>(),
                         {j.at("pair").at(0).get<std::string>(), j.at("pair").at(1).get<std::string>()}});
    m.broker_host = doc.at("broker").at("host").get<std::string>();
    m.broker_port = doc.at("broker").at("port").get<std::uint16_t>();
    m.artifact_dir = doc.at("artifactDir").get<std::string>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw BadManifest(e.what());
  }
}

std::vector<TaskManifest> build_manifests(const tag::JobSpec& spec, const expansion::PhysicalTopology& topology,
                                          std::span<const DatasetRecord> datasets, const ManifestOptions& opts) {
  std::vector<DirectoryEntry> directory;
  for (const auto& w : topology.workers) directory.push_back({w.worker_id, w.role, w.program, w.channel_bindings});

  std::vector<TaskManifest> out;
  for (const auto& w : topology.workers) {
    TaskManifest m;
    m.job_id = topology.job_id;
    m.worker_id = w.worker_id;
    m.role = w.role;
    m.program = w.program;
    m.dataset_id = w.dataset_ref;
    if (w.dataset_ref) {
      for (const auto& d : datasets)
        if (d.dataset_id == *w.dataset_ref) m.dataset_url = d.url;
      if (!m.dataset_url) throw BadManifest("no url for dataset '" + *w.dataset_ref + "'");
    }
    m.hyperparams = spec.hyperparams;
    for (const auto& [ch_name, group] : w.channel_bindings) {
      const auto* ch = spec.find_channel(ch_name);
      if (ch == nullptr) throw BadManifest("worker '" + w.worker_id + "' binds unknown channel '" + ch_name + "'");
      ManifestChannel c;
      c.name = ch_name;
      c.pair = ch->pair;
      c.group = group;
      c.backend = ch->backend.kind;
      c.bandwidth = ch->backend.bandwidth_shape;
      if (auto it = ch->func_tags.find(w.role); it != ch->func_tags.end()) c.func_tags = it->second;
      c.peers = topology.peers(w.worker_id, ch_name);
      m.channels.push_back(std::move(c));
    }
    m.directory = directory;
    m.links = topology.channels;
    m.broker_host = opts.broker_host;
    m.broker_port = opts.broker_port;
    m.artifact_dir = opts.artifact_dir;
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace flame::fl
