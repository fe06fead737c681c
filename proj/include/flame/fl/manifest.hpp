// SPDX-License-Identifier: Apache-2.0
// Everything one worker needs to run: its role program, channel bindings,
// dataset locator, hyperparameters and a directory of the job's workers.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "flame/channel/channel.hpp"
#include "flame/common/resources.hpp"
#include "flame/expansion/topology.hpp"
#include "flame/tag/job_spec.hpp"

namespace flame::fl {

FLAME_DEFINE_ERROR(BadManifest);

struct ManifestChannel {
  std::string name;
  std::pair<std::string, std::string> pair;
  std::string group;
  tag::BackendKind backend = tag::BackendKind::BrokerSim;
  channel::BandwidthShape bandwidth;
  std::vector<std::string> func_tags;  // this role's tags
  std::vector<std::string> peers;      // worker ids linked to this worker here

  bool has_tag(const std::string& t) const;
  bool operator==(const ManifestChannel&) const = default;
};

struct DirectoryEntry {
  std::string worker_id;
  std::string role;
  std::string program;
  std::map<std::string, std::string> bindings;

  bool operator==(const DirectoryEntry&) const = default;
};

struct TaskManifest {
  std::string job_id;
  std::string worker_id;
  std::string role;
  std::string program;
  std::optional<std::string> dataset_id;
  std::optional<std::string> dataset_url;
  std::map<std::string, double> hyperparams;
  std::vector<ManifestChannel> channels;
  std::vector<DirectoryEntry> directory;
  std::vector<expansion::ChannelLink> links;  // every channel of the job
  std::string broker_host;
  std::uint16_t broker_port = 0;  // 0: in-process fabric
  std::string artifact_dir;

  double hyper(const std::string& key, double fallback) const;
  const ManifestChannel* channel(const std::string& name) const;
  // First channel on which this worker carries `tag`.
  const ManifestChannel* channel_with_tag(const std::string& tag) const;
  std::vector<const DirectoryEntry*> workers_with_role(const std::string& role) const;
  const DirectoryEntry* entry(const std::string& worker_id) const;

  bool operator==(const TaskManifest&) const = default;
};

nlohmann::ordered_json manifest_to_json(const TaskManifest& m);
TaskManifest manifest_from_json(const nlohmann::ordered_json& doc);

struct ManifestOptions {
  std::string broker_host;
  std::uint16_t broker_port = 0;
  std::string artifact_dir;
};

// One manifest per worker of `topology`, in topology order.
std::vector<TaskManifest> build_manifests(const tag::JobSpec& spec, const expansion::PhysicalTopology& topology,
                                          std::span<const DatasetRecord> datasets, const ManifestOptions& opts = {});

}  // namespace flame::fl
