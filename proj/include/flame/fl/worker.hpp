// SPDX-License-Identifier: Apache-2.0
// Worker runtime: joins a manifest's channels and runs its role program,
// a tasklet chain over FlState.
#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "flame/channel/channel.hpp"
#include "flame/fl/coordinator.hpp"
#include "flame/fl/dataset.hpp"
#include "flame/fl/manifest.hpp"
#include "flame/fl/metrics.hpp"
#include "flame/fl/model.hpp"
#include "flame/tasklet/tasklet.hpp"

namespace flame::fl {

FLAME_DEFINE_ERROR(UnknownProgram);
FLAME_DEFINE_ERROR(MissingChannel);
FLAME_DEFINE_ERROR(PeersUnavailable);
FLAME_DEFINE_ERROR(RoundTimeout);
FLAME_DEFINE_ERROR(CoordinatorUnreachable);
FLAME_DEFINE_ERROR(WorkerStopped);

namespace kind {
inline constexpr const char* kWeights = "weights";
inline constexpr const char* kUpdate = "update";
inline constexpr const char* kEndOfTrain = "eot";
inline constexpr const char* kAssign = "assign";
inline constexpr const char* kEnabled = "enabled";
inline constexpr const char* kReport = "report";
inline constexpr const char* kRing = "ring";
}  // namespace kind

// One message handed to a role program.
struct Delivery {
  std::string channel;
  std::string from;
  std::string to;
  std::string func_tag;
  std::string kind;
  int round = 0;
  std::uint64_t digest = 0;  // FNV-1a of the payload

  auto operator<=>(const Delivery&) const = default;
};

struct RoundRecord {
  int round = 0;
  double duration_ms = 0;
  double upload_ms = 0;
  double loss = 0;
  double accuracy = 0;
  std::uint64_t bytes_sent = 0;
  std::uint64_t inbound_bytes = 0;  // update payload bytes received
};

enum class WorkerStatus { Completed, Stopped };

struct WorkerResult {
  std::string worker_id;
  std::string role;
  std::string program;
  WorkerStatus status = WorkerStatus::Completed;
  ModelWeights weights;
  // Set on the worker that holds the job's global model at the end.
  std::optional<ModelWeights> global_weights;
  std::vector<RoundRecord> rounds;
  std::vector<std::set<std::string>> enabled_per_round;  // coordinator only
  std::vector<tasklet::TraceEvent> trace;
  std::vector<Delivery> deliveries;
};

std::uint64_t fnv1a(const channel::Bytes& bytes);

class WorkerContext {
 public:
  WorkerContext(TaskManifest manifest, std::shared_ptr<channel::Fabric> fabric, std::function<bool()> stop);
  ~WorkerContext();

  const TaskManifest& manifest() const { return manifest_; }
  const std::string& worker_id() const { return manifest_.worker_id; }

  channel::ChannelHandle& channel(const std::string& name);
  channel::ChannelHandle* channel_with_tag(const std::string& tag);
  channel::ChannelHandle& require_tag(const std::string& tag);
  // The channel whose other end is a worker running a program in `programs`.
  channel::ChannelHandle* channel_to_program(const std::set<std::string>& programs);

  void join_all();
  void leave_all();
  void wait_for_peers(channel::Duration timeout);

  // Blocking receive that honors the stop flag; RecvTimeout after `timeout`.
  channel::Message recv(channel::ChannelHandle& h, const channel::EndId& from, channel::Duration timeout);
  // Updates for `round` from `ends`, first-come first-served. Stale rounds
  // are dropped; ends that leave or miss the deadline are skipped.
  std::vector<std::pair<channel::EndId, channel::Message>> gather(channel::ChannelHandle& h,
                                                                  const std::vector<channel::EndId>& ends, int round,
                                                                  channel::Duration timeout);
  void send(channel::ChannelHandle& h, const channel::EndId& to, channel::Message msg);

  std::uint64_t bytes_sent() const;
  void check_stop() const;
  void record(const channel::ChannelHandle& h, const channel::Message& m);

  MetricsSink metrics;
  WorkerResult result;
  channel::Duration round_timeout{30000};

 private:
  TaskManifest manifest_;
  std::shared_ptr<channel::Fabric> fabric_;
  std::function<bool()> stop_;
  std::map<std::string, std::unique_ptr<channel::ChannelHandle>> channels_;
};

struct FlState {
  WorkerContext* ctx = nullptr;
  ModelWeights weights;
  int round = 0;
  int rounds = 0;
  int epochs = 1;
  double lr = 0.1;
  bool done = false;  // end of training announced by the upstream
  bool idle = false;  // sitting out the current round
  std::optional<SyntheticDataset> data;

  ModelUpdate local;
  double pre_loss = 0;
  double post_loss = 0;
  double acc = 0;

  std::optional<channel::EndId> upstream;
  std::vector<channel::EndId> round_ends;
  std::vector<ModelUpdate> updates;
  std::vector<double> update_losses;
  std::uint64_t inbound_bytes = 0;
  std::uint64_t group_samples = 0;
  double group_loss = 0;
  double group_acc = 0;

  std::vector<std::string> members;  // ring order, hybrid and distributed trainers
  std::string leader;
  std::optional<CoordinatorState> coord;

  channel::Clock::time_point round_start;
  std::uint64_t bytes_at_start = 0;
  double upload_ms = 0;
};

using Program = tasklet::Chain<FlState>;
using ProgramFactory = std::function<Program(const TaskManifest&)>;

// Built-in programs: trainer, aggregator, global-aggregator, coordinator,
// coord-trainer, coord-aggregator, coord-global-aggregator, hybrid-trainer,
// dist-trainer.
Program build_program(const TaskManifest& m);
void register_program(const std::string& name, ProgramFactory factory);
std::vector<std::string> program_names();

// Chains exposed for editing. `rounds` == 0 drops the training loop.
Program global_aggregator_chain(int rounds);
// Global aggregator chain edited for coordinated FL.
Program coord_global_aggregator_from_base(int rounds);
Program coord_global_aggregator_chain(int rounds);

// Leaders per group of a hybrid topology, keyed by group: the trainer with
// the fastest link to its aggregator, lowest id on ties.
std::map<std::string, std::string> hybrid_leaders(const TaskManifest& m);

struct WorkerOptions {
  std::function<bool()> stop_requested;
  std::function<void(const tasklet::TraceEvent&)> observer;
  channel::Duration peer_timeout{60000};
};

WorkerResult run_worker(const TaskManifest& m, std::shared_ptr<channel::Fabric> fabric, const WorkerOptions& opts = {});

}  // namespace flame::fl
