// SPDX-License-Identifier: Apache-2.0
#include "flame/fl/local_runner.hpp"

#include <atomic>
#include <chrono>
#include <thread>

#include "flame/channel/hub.hpp"
#include "flame/expansion/expand.hpp"

namespace flame::fl {

std::multiset<Delivery> JobResult::deliveries() const {
  std::multiset<Delivery> out;
  for (const auto& [id, w] : workers) out.insert(w.deliveries.begin(), w.deliveries.end());
  return out;
}

const WorkerResult* JobResult::holder() const {
  for (const auto& [id, w] : workers)
    if (w.global_weights) return &w;
  return nullptr;
}

JobResult run_local_manifests(std::vector<TaskManifest> manifests, const LocalRunOptions& opts) {
  std::optional<channel::HubServer> hub;
  std::shared_ptr<channel::Fabric> fabric;
  if (opts.over_hub) {
    hub.emplace(0);
    fabric = channel::Fabric::remote("127.0.0.1", hub->port());
  } else {
    fabric = channel::Fabric::in_process();
  }

  for (auto& m : manifests) {
    if (opts.backend)
      for (auto& c : m.channels) c.backend = *opts.backend;
    if (!opts.artifact_dir.empty()) m.artifact_dir = opts.artifact_dir.string();
  }

  std::atomic<bool> failed{false};
  std::vector<WorkerResult> results(manifests.size());
  std::vector<std::exception_ptr> errors(manifests.size());
  std::vector<std::thread> threads;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < manifests.size(); ++i) {
    threads.emplace_back([&, i] {
      WorkerOptions wo;
      wo.peer_timeout = opts.peer_timeout;
      wo.stop_requested = [&] { return failed.load(); };
      if (opts.observer)
        wo.observer = [&, id = manifests[i].worker_id](const tasklet::TraceEvent& ev) { opts.observer(id, ev); };
      try {
        results[i] = run_worker(manifests[i], fabric, wo);
      } catch (...) {
        errors[i] = std::current_exception();
        failed = true;
      }
    });
  }
  for (auto& t : threads) t.join();

  JobResult out;
  out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (auto& r : results) out.workers[r.worker_id] = std::move(r);
  if (const auto* h = out.holder()) out.final_weights = h->global_weights;
  return out;
}

JobResult run_local_job(const tag::JobSpec& spec, std::span<const DatasetRecord> datasets,
                        std::span<const ComputeRecord> computes, const LocalRunOptions& opts) {
  std::vector<ComputeRecord> fallback{{"local", "*", "", 1 << 30}};
  if (computes.empty()) computes = fallback;
  auto topology = expansion::expand(spec, datasets, computes, opts.job_id);
  ManifestOptions mo;
  mo.artifact_dir = opts.artifact_dir.string();
  auto result = run_local_manifests(build_manifests(spec, topology, datasets, mo), opts);
  result.topology = std::move(topology);
  return result;
}

}  // namespace flame::fl
