// SPDX-License-Identifier: Apache-2.0
#include "flame/fl/worker.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>

namespace flame::fl {

using channel::ChannelHandle;
using channel::Clock;
using channel::Duration;
using channel::EndId;
using channel::Message;

namespace {

constexpr Duration kPollSlice{100};

int round_of(const Message& m) { return std::stoi(m.get(channel::header::kRound, "0")); }

}  // namespace

std::uint64_t fnv1a(const channel::Bytes& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

WorkerContext::WorkerContext(TaskManifest manifest, std::shared_ptr<channel::Fabric> fabric,
                             std::function<bool()> stop)
    : manifest_(std::move(manifest)), fabric_(std::move(fabric)), stop_(std::move(stop)) {
  for (const auto& c : manifest_.channels) {
    channel::ChannelConfig cfg;
    cfg.job_id = manifest_.job_id;
    cfg.channel = c.name;
    cfg.pair = c.pair;
    cfg.role = manifest_.role;
    cfg.end = EndId{manifest_.worker_id, c.name, c.group};
    cfg.bandwidth = c.bandwidth;
    channels_[c.name] = std::make_unique<ChannelHandle>(std::move(cfg), fabric_->transport(c.backend));
  }
  result.worker_id = manifest_.worker_id;
  result.role = manifest_.role;
  result.program = manifest_.program;
}

WorkerContext::~WorkerContext() {
  try {
    leave_all();
  } catch (const std::exception& e) {
    spdlog::warn("{}: leave failed: {}", manifest_.worker_id, e.what());
  }
}

ChannelHandle& WorkerContext::channel(const std::string& name) {
  auto it = channels_.find(name);
  if (it == channels_.end()) throw MissingChannel(manifest_.worker_id + " has no channel '" + name + "'");
  return *it->second;
}

ChannelHandle* WorkerContext::channel_with_tag(const std::string& tag) {
  const auto* c = manifest_.channel_with_tag(tag);
  return c == nullptr ? nullptr : &channel(c->name);
}

ChannelHandle& WorkerContext::require_tag(const std::string& tag) {
  auto* h = channel_with_tag(tag);
  if (h == nullptr) throw MissingChannel(manifest_.worker_id + " has no channel tagged '" + tag + "'");
  return *h;
}

ChannelHandle* WorkerContext::channel_to_program(const std::set<std::string>& programs) {
  for (const auto& c : manifest_.channels) {
    const auto& other = c.pair.first == manifest_.role ? c.pair.second : c.pair.first;
    for (const auto* e : manifest_.workers_with_role(other))
      if (programs.contains(e->program)) return &channel(c.name);
  }
  return nullptr;
}

void WorkerContext::join_all() {
  for (auto& [name, h] : channels_)
    if (!h->joined()) h->join();
}

void WorkerContext::leave_all() {
  for (auto& [name, h] : channels_)
    if (h->joined()) h->leave();
}

void WorkerContext::wait_for_peers(Duration timeout) {
  const auto deadline = Clock::now() + timeout;
  for (const auto& c : manifest_.channels) {
    std::set<std::string> want(c.peers.begin(), c.peers.end());
    auto& h = channel(c.name);
    while (!h.wait_for_peers(want, kPollSlice)) {
      check_stop();
      if (Clock::now() >= deadline)
        throw PeersUnavailable(manifest_.worker_id + ": peers on '" + c.name + "' did not join in time");
    }
  }
}

void WorkerContext::check_stop() const {
  if (stop_ && stop_()) throw WorkerStopped(manifest_.worker_id + " stopped");
}

void WorkerContext::record(const ChannelHandle& h, const Message& m) {
  result.deliveries.push_back({h.config().channel, m.sender(), manifest_.worker_id, m.func_tag(), m.get("kind"),
                               round_of(m), fnv1a(m.payload)});
}

Message WorkerContext::recv(ChannelHandle& h, const EndId& from, Duration timeout) {
  const auto deadline = Clock::now() + timeout;
  while (true) {
    check_stop();
    const auto left = std::chrono::duration_cast<Duration>(deadline - Clock::now());
    try {
      auto m = h.recv(from, std::clamp(left, Duration(0), kPollSlice));
      record(h, m);
      return m;
    } catch (const channel::RecvTimeout&) {
      if (Clock::now() >= deadline) throw;
    }
  }
}

std::vector<std::pair<EndId, Message>> WorkerContext::gather(ChannelHandle& h, const std::vector<EndId>& ends,
                                                             int round, Duration timeout) {
  const auto deadline = Clock::now() + timeout;
  std::vector<std::pair<EndId, Message>> out;
  auto stream = h.recv_fifo(ends);
  auto accept = [&](const EndId& end, Message m) {
    record(h, m);
    while (round_of(m) != round || m.get("kind") != kind::kUpdate) {
      spdlog::debug("{}: dropping stale message from {} (round {})", worker_id(), end.worker_id, round_of(m));
      const auto left = std::chrono::duration_cast<Duration>(deadline - Clock::now());
      if (left <= Duration(0)) return;
      try {
        m = recv(h, end, left);
      } catch (const channel::RecvTimeout&) {
        return;
      } catch (const channel::PeerLeft&) {
        return;
      }
    }
    out.emplace_back(end, std::move(m));
  };
  while (true) {
    check_stop();
    const auto left = std::chrono::duration_cast<Duration>(deadline - Clock::now());
    if (left <= Duration(0)) {
      spdlog::warn("{}: round {} timed out with {} of {} updates", worker_id(), round, out.size(), ends.size());
      break;
    }
    std::optional<channel::FifoItem> item;
    try {
      item = stream.next(std::min(left, kPollSlice));
    } catch (const channel::RecvTimeout&) {
      continue;
    }
    if (!item) break;
    if (item->peer_left()) {
      spdlog::warn("{}: {} left before sending its round {} update", worker_id(), item->end.worker_id, round);
      continue;
    }
    accept(item->end, std::move(*item->msg));
  }
  return out;
}

void WorkerContext::send(ChannelHandle& h, const EndId& to, Message msg) { h.send(to, std::move(msg)); }

std::uint64_t WorkerContext::bytes_sent() const {
  std::uint64_t total = 0;
  for (const auto& [name, h] : channels_) total += h->bytes_sent();
  return total;
}

WorkerResult run_worker(const TaskManifest& m, std::shared_ptr<channel::Fabric> fabric, const WorkerOptions& opts) {
  auto program = build_program(m);
  WorkerContext ctx(m, std::move(fabric), opts.stop_requested);
  ctx.round_timeout = Duration(static_cast<std::int64_t>(m.hyper("roundTimeoutMs", 30000)));
  if (!m.artifact_dir.empty()) ctx.metrics = MetricsSink(m.artifact_dir);

  FlState state;
  state.ctx = &ctx;
  tasklet::RunOptions<FlState> run_opts;
  run_opts.stop_requested = opts.stop_requested;
  run_opts.observer = [&](const tasklet::TraceEvent& ev) {
    ctx.result.trace.push_back(ev);
    if (opts.observer) opts.observer(ev);
  };

  ctx.join_all();
  bool stopped = false;
  try {
    // Without rounds nobody exchanges messages, and peers may be gone already.
    if (m.hyper("rounds", 1) > 0) ctx.wait_for_peers(opts.peer_timeout);
    stopped = program.run(state, run_opts) == tasklet::RunResult::Stopped;
  } catch (const WorkerStopped&) {
    stopped = true;
  } catch (const tasklet::TaskFailure& f) {
    try {
      std::rethrow_exception(f.inner());
    } catch (const WorkerStopped&) {
      stopped = true;
    } catch (...) {
    }
    if (!stopped) throw;
  }
  ctx.leave_all();
  ctx.result.status = stopped ? WorkerStatus::Stopped : WorkerStatus::Completed;
  ctx.result.weights = state.weights;
  if (ctx.result.global_weights && !stopped) ctx.metrics.checkpoint(-1, *ctx.result.global_weights);
  return std::move(ctx.result);
}

}  // namespace flame::fl
