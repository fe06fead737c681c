// SPDX-License-Identifier: Apache-2.0
// Runs every worker of a job as a thread of this process over one fabric.
#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "flame/common/resources.hpp"
#include "flame/expansion/topology.hpp"
#include "flame/fl/manifest.hpp"
#include "flame/fl/worker.hpp"
#include "flame/tag/job_spec.hpp"

namespace flame::fl {

struct LocalRunOptions {
  std::string job_id = "local";
  std::filesystem::path artifact_dir;       // empty: nothing written
  std::optional<tag::BackendKind> backend;  // overrides every channel
  bool over_hub = false;                    // route through a loopback hub
  channel::Duration peer_timeout{60000};
  std::function<void(const std::string& worker_id, const tasklet::TraceEvent&)> observer;
};

struct JobResult {
  expansion::PhysicalTopology topology;
  std::map<std::string, WorkerResult> workers;
  std::optional<ModelWeights> final_weights;
  double wall_ms = 0;

  std::multiset<Delivery> deliveries() const;
  // The worker holding the global model.
  const WorkerResult* holder() const;
};

JobResult run_local_job(const tag::JobSpec& spec, std::span<const DatasetRecord> datasets,
                        std::span<const ComputeRecord> computes = {}, const LocalRunOptions& opts = {});
JobResult run_local_manifests(std::vector<TaskManifest> manifests, const LocalRunOptions& opts = {});

}  // namespace flame::fl
