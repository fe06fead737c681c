// SPDX-License-Identifier: Apache-2.0
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "flame/fl/train.hpp"
#include "flame/fl/worker.hpp"

namespace flame::fl {

using channel::ChannelHandle;
using channel::Clock;
using channel::Duration;
using channel::EndId;
using channel::Message;
using tasklet::tasklet;

namespace {

using T = tasklet::Tasklet<FlState>;

double ms_since(Clock::time_point t) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t).count();
}

int hdr_int(const Message& m, const char* key) { return std::stoi(m.get(key, "0")); }
double hdr_double(const Message& m, const char* key) { return std::stod(m.get(key, "0")); }

std::string to_text(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (const auto& id : ids) out += (out.empty() ? "" : ",") + id;
  return out;
}

std::vector<std::string> split_ids(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string id;
  while (std::getline(ss, id, ','))
    if (!id.empty()) out.push_back(id);
  return out;
}

Message weights_message(const std::string& func_tag, const char* k, int round, const ModelWeights& w) {
  auto m = channel::make_message(func_tag, serialize(w));
  m.headers["kind"] = k;
  m.headers[channel::header::kRound] = std::to_string(round);
  return m;
}

Message control_message(const std::string& func_tag, const char* k, int round) {
  auto m = channel::make_message(func_tag);
  m.headers["kind"] = k;
  m.headers[channel::header::kRound] = std::to_string(round);
  return m;
}

int rounds_of(const TaskManifest& m) { return static_cast<int>(m.hyper("rounds", 1)); }

bool is_top_level(FlState& s) { return s.ctx->channel_with_tag("fetch") == nullptr; }

void begin_round(FlState& s) {
  s.round_start = Clock::now();
  s.bytes_at_start = s.ctx->bytes_sent();
  s.upload_ms = 0;
  s.inbound_bytes = 0;
}

void finish_round(FlState& s, double loss_value, double acc) {
  RoundRecord r;
  r.round = s.round;
  r.duration_ms = ms_since(s.round_start);
  r.upload_ms = s.upload_ms;
  r.loss = loss_value;
  r.accuracy = acc;
  r.bytes_sent = s.ctx->bytes_sent() - s.bytes_at_start;
  r.inbound_bytes = s.inbound_bytes;
  s.ctx->result.rounds.push_back(r);
  const auto& m = s.ctx->manifest();
  s.ctx->metrics.row({r.round, m.worker_id, m.role, r.duration_ms, r.upload_ms, r.loss, r.accuracy, r.bytes_sent});
  if (r.inbound_bytes > 0)
    s.ctx->metrics.event({{"event", "inbound"}, {"worker", m.worker_id}, {"round", r.round},
                          {"bytes", r.inbound_bytes}});
}

// Scripted slowdown: hyperparams delay.<worker>.ms from round delay.<worker>.from.
void injected_delay(FlState& s) {
  const auto& m = s.ctx->manifest();
  const double ms = m.hyper("delay." + m.worker_id + ".ms", 0);
  const int from = static_cast<int>(m.hyper("delay." + m.worker_id + ".from", 1));
  if (ms > 0 && s.round >= from) std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
}

void send_update(FlState& s, ChannelHandle& h, const EndId& to, const ModelWeights& w, std::uint64_t samples,
                 double loss_value, double acc) {
  auto msg = weights_message("upload", kind::kUpdate, s.round, w);
  msg.headers["samples"] = std::to_string(samples);
  msg.headers["loss"] = to_text(loss_value);
  msg.headers["accuracy"] = to_text(acc);
  const auto t0 = Clock::now();
  injected_delay(s);
  s.ctx->send(h, to, std::move(msg));
  s.upload_ms = ms_since(t0);
}

// ---- common ----

void t_initialize(FlState& s) {
  const auto& m = s.ctx->manifest();
  s.rounds = rounds_of(m);
  s.epochs = static_cast<int>(m.hyper("epochs", 1));
  s.lr = m.hyper("learningRate", 0.1);
  s.weights = ModelWeights::zeros(static_cast<std::size_t>(m.hyper("modelDim", 8)));
}

void t_load_data(FlState& s) {
  const auto& m = s.ctx->manifest();
  if (!m.dataset_url) throw BadDatasetUrl(m.worker_id + " has no dataset");
  s.data = generate(parse_dataset_url(*m.dataset_url, static_cast<std::size_t>(m.hyper("modelDim", 8))));
}

// ---- trainer ----

void t_fetch_trainer(FlState& s) {
  auto& h = s.ctx->require_tag("fetch");
  if (!s.upstream) {
    auto ends = h.ends();
    if (ends.empty()) throw PeersUnavailable(s.ctx->worker_id() + " has no aggregator");
    s.upstream = ends.front();
  }
  auto msg = s.ctx->recv(h, *s.upstream, s.ctx->round_timeout);
  if (msg.get("kind") == kind::kEndOfTrain) {
    s.done = true;
    return;
  }
  s.weights = deserialize(msg.payload);
  s.round = hdr_int(msg, channel::header::kRound);
  begin_round(s);
}

void t_train(FlState& s) {
  if (s.done || s.idle) return;
  s.pre_loss = loss(s.weights, *s.data);
  s.acc = accuracy(s.weights, *s.data);
  s.local = local_train(s.weights, *s.data, s.epochs, s.lr);
  s.local.round = s.round;
  s.local.sender = s.ctx->worker_id();
  s.post_loss = loss(s.local.weights, *s.data);
}

void t_evaluate(FlState& s) {
  if (s.done || s.idle) return;
  s.ctx->metrics.event({{"event", "evaluate"},
                        {"worker", s.ctx->worker_id()},
                        {"round", s.round},
                        {"global_loss", s.pre_loss},
                        {"local_loss", s.post_loss},
                        {"local_accuracy", accuracy(s.local.weights, *s.data)}});
}

void t_upload_trainer(FlState& s) {
  if (s.done || s.idle) return;
  auto& h = s.ctx->require_tag("upload");
  // Reports carry the metrics of the model it received.
  send_update(s, h, *s.upstream, s.local.weights, s.local.sample_count, s.pre_loss, s.acc);
  finish_round(s, s.post_loss, accuracy(s.local.weights, *s.data));
}

bool round_limit(FlState& s) { return s.done || s.round >= s.rounds; }

// ---- aggregators ----

void t_fetch_aggregator(FlState& s) {
  if (s.idle) return;
  auto& h = s.ctx->require_tag("fetch");
  if (!s.upstream) {
    auto ends = h.ends();
    if (ends.empty()) throw PeersUnavailable(s.ctx->worker_id() + " has no upstream aggregator");
    s.upstream = ends.front();
  }
  auto msg = s.ctx->recv(h, *s.upstream, s.ctx->round_timeout);
  if (msg.get("kind") == kind::kEndOfTrain) {
    s.done = true;
    return;
  }
  s.weights = deserialize(msg.payload);
  s.round = hdr_int(msg, channel::header::kRound);
  begin_round(s);
}

void t_distribute(FlState& s) {
  if (s.done || s.idle) return;
  if (is_top_level(s)) {
    ++s.round;
    begin_round(s);
  }
  auto& h = s.ctx->require_tag("distribute");
  s.round_ends = h.ends();
  if (s.round_ends.empty()) {
    spdlog::warn("{}: no peers to distribute to in round {}", s.ctx->worker_id(), s.round);
    s.ctx->metrics.event({{"event", "warning"}, {"worker", s.ctx->worker_id()}, {"round", s.round},
                          {"detail", "distribute without peers"}});
    return;
  }
  const auto msg = weights_message("distribute", kind::kWeights, s.round, s.weights);
  for (const auto& end : s.round_ends) s.ctx->send(h, end, msg);
}

void t_gather(FlState& s) {
  if (s.done || s.idle) return;
  auto& h = s.ctx->require_tag("aggregate");
  s.updates.clear();
  s.update_losses.clear();
  std::vector<double> accs;
  for (auto& [end, msg] : s.ctx->gather(h, s.round_ends, s.round, s.ctx->round_timeout)) {
    ModelUpdate u;
    u.weights = deserialize(msg.payload);
    u.sample_count = std::stoull(msg.get("samples", "0"));
    u.round = s.round;
    u.sender = end.worker_id;
    s.inbound_bytes += msg.payload.size();
    s.updates.push_back(std::move(u));
    s.update_losses.push_back(hdr_double(msg, "loss"));
    accs.push_back(hdr_double(msg, "accuracy"));
  }
  if (s.updates.empty())
    throw RoundTimeout(s.ctx->worker_id() + " received no updates in round " + std::to_string(s.round));
  s.group_samples = 0;
  double loss_sum = 0;
  double acc_sum = 0;
  for (std::size_t i = 0; i < s.updates.size(); ++i) {
    const auto n = static_cast<double>(s.updates[i].sample_count);
    s.group_samples += s.updates[i].sample_count;
    loss_sum += n * s.update_losses[i];
    acc_sum += n * accs[i];
  }
  s.group_loss = loss_sum / static_cast<double>(s.group_samples);
  s.group_acc = acc_sum / static_cast<double>(s.group_samples);
}

void t_aggregate(FlState& s) {
  if (s.done || s.idle) return;
  s.weights = fedavg_aggregate(s.updates);
  if (is_top_level(s)) {
    s.ctx->metrics.checkpoint(s.round, s.weights);
    s.ctx->result.global_weights = s.weights;
    finish_round(s, s.group_loss, s.group_acc);
  }
}

void t_upload_aggregator(FlState& s) {
  if (s.done || s.idle) return;
  auto& h = s.ctx->require_tag("upload");
  send_update(s, h, *s.upstream, s.weights, s.group_samples, s.group_loss, s.group_acc);
  finish_round(s, s.group_loss, s.group_acc);
}

void apply_leader_filter(FlState& s) {
  auto leaders = hybrid_leaders(s.ctx->manifest());
  if (leaders.empty()) return;
  std::set<std::string> ids;
  for (const auto& [group, id] : leaders) ids.insert(id);
  s.ctx->require_tag("distribute").set_filter([ids](const EndId& e) { return ids.contains(e.worker_id); });
}

void t_initialize_aggregator(FlState& s) {
  t_initialize(s);
  if (is_top_level(s)) {
    s.ctx->result.global_weights = s.weights;
    apply_leader_filter(s);
  }
}

void t_end_of_train(FlState& s) {
  auto& h = s.ctx->require_tag("distribute");
  const auto msg = weights_message("distribute", kind::kEndOfTrain, s.round, s.weights);
  for (const auto& end : h.ends()) {
    try {
      s.ctx->send(h, end, msg);
    } catch (const Error& e) {
      spdlog::debug("{}: end_of_train to {} skipped: {}", s.ctx->worker_id(), end.worker_id, e.what());
    }
  }
}

// ---- coordinated FL ----

ChannelHandle& coordinator_channel(FlState& s) { return s.ctx->require_tag("coordinate"); }

EndId coordinator_end(FlState& s, ChannelHandle& h) {
  auto ends = h.ends();
  if (ends.empty()) throw CoordinatorUnreachable(s.ctx->worker_id() + " sees no coordinator");
  return ends.front();
}

Message recv_from_coordinator(FlState& s) {
  auto& h = coordinator_channel(s);
  const auto timeout = Duration(static_cast<std::int64_t>(
      s.ctx->manifest().hyper("coordTimeoutMs", static_cast<double>(s.ctx->round_timeout.count()))));
  try {
    return s.ctx->recv(h, coordinator_end(s, h), timeout);
  } catch (const channel::RecvTimeout&) {
    throw CoordinatorUnreachable(s.ctx->worker_id() + ": no word from the coordinator within " +
                                 std::to_string(timeout.count()) + " ms");
  } catch (const channel::PeerLeft&) {
    throw CoordinatorUnreachable(s.ctx->worker_id() + ": coordinator left");
  }
}

void t_get_coord_ends(FlState& s) {
  auto msg = recv_from_coordinator(s);
  auto ids = split_ids(msg.get("aggregators"));
  std::set<std::string> enabled(ids.begin(), ids.end());
  s.ctx->require_tag("distribute").set_filter([enabled](const EndId& e) { return enabled.contains(e.worker_id); });
}

void t_get_assignment_aggregator(FlState& s) {
  auto msg = recv_from_coordinator(s);
  s.round = hdr_int(msg, channel::header::kRound);
  auto ids = split_ids(msg.get("trainers"));
  s.idle = ids.empty();
  std::set<std::string> assigned(ids.begin(), ids.end());
  s.ctx->require_tag("distribute").set_filter([assigned](const EndId& e) { return assigned.contains(e.worker_id); });
}

void t_report(FlState& s) {
  if (s.idle) return;
  auto& h = coordinator_channel(s);
  auto msg = control_message("coordinate", kind::kReport, s.round);
  msg.headers["upload_ms"] = to_text(s.upload_ms);
  s.ctx->send(h, coordinator_end(s, h), std::move(msg));
}

void t_get_assignment_trainer(FlState& s) {
  auto msg = recv_from_coordinator(s);
  s.round = hdr_int(msg, channel::header::kRound);
  const auto agg = msg.get("aggregator");
  auto peer = s.ctx->require_tag("fetch").peer(agg);
  if (!peer) throw PeersUnavailable(s.ctx->worker_id() + " was assigned unknown aggregator '" + agg + "'");
  s.upstream = *peer;
}

struct CoordinatorChannels {
  ChannelHandle* trainers;
  ChannelHandle* aggregators;
  ChannelHandle* global;
};

CoordinatorChannels coordinator_channels(FlState& s) {
  CoordinatorChannels c{s.ctx->channel_to_program({"coord-trainer"}),
                        s.ctx->channel_to_program({"coord-aggregator"}),
                        s.ctx->channel_to_program({"coord-global-aggregator"})};
  if (!c.aggregators || !c.global) throw MissingChannel(s.ctx->worker_id() + " lacks aggregator/global channels");
  return c;
}

void t_initialize_coordinator(FlState& s) {
  const auto& m = s.ctx->manifest();
  s.rounds = rounds_of(m);
  auto c = coordinator_channels(s);
  std::vector<std::string> aggs;
  for (const auto& e : c.aggregators->ends()) aggs.push_back(e.worker_id);
  s.coord.emplace(aggs);
  s.coord->threshold = m.hyper("stragglerFactor", 2.0);
  s.coord->floor_ms = m.hyper("coordFloorMs", 5.0);
  s.coord->cap = static_cast<int>(m.hyper("backoffCap", 16));
}

void t_assign(FlState& s) {
  ++s.round;
  begin_round(s);
  auto c = coordinator_channels(s);
  const auto enabled = s.coord->enabled();
  std::vector<std::string> aggs(enabled.begin(), enabled.end());
  std::map<std::string, std::vector<std::string>> per_agg;
  if (c.trainers != nullptr) {
    const auto trainers = c.trainers->ends();
    for (std::size_t i = 0; i < trainers.size(); ++i) {
      const auto& agg = aggs[i % aggs.size()];
      per_agg[agg].push_back(trainers[i].worker_id);
      auto msg = control_message("coordinate", kind::kAssign, s.round);
      msg.headers["aggregator"] = agg;
      s.ctx->send(*c.trainers, trainers[i], std::move(msg));
    }
  }
  s.members.clear();
  for (const auto& end : c.aggregators->ends()) {
    auto msg = control_message("coordinate", kind::kAssign, s.round);
    msg.headers["trainers"] = join_ids(per_agg[end.worker_id]);
    if (!per_agg[end.worker_id].empty()) s.members.push_back(end.worker_id);
    s.ctx->send(*c.aggregators, end, std::move(msg));
  }
  auto msg = control_message("coordinate", kind::kEnabled, s.round);
  msg.headers["aggregators"] = join_ids(s.members);
  for (const auto& end : c.global->ends()) s.ctx->send(*c.global, end, msg);
  s.ctx->result.enabled_per_round.emplace_back(s.members.begin(), s.members.end());
}

void t_collect(FlState& s) {
  auto c = coordinator_channels(s);
  std::map<std::string, double> delays;
  for (const auto& id : s.members) {
    auto end = c.aggregators->peer(id);
    if (!end) continue;
    while (true) {
      auto msg = s.ctx->recv(*c.aggregators, *end, s.ctx->round_timeout);
      if (msg.get("kind") == kind::kReport && hdr_int(msg, channel::header::kRound) == s.round) {
        delays[id] = hdr_double(msg, "upload_ms");
        break;
      }
    }
  }
  const auto next = coordinator_step(*s.coord, delays);
  s.ctx->metrics.event({{"event", "coordinator"},
                        {"round", s.round},
                        {"enabled", s.members},
                        {"delays", delays},
                        {"next", std::vector<std::string>(next.begin(), next.end())}});
  finish_round(s, 0, 0);
}

// ---- ring all-reduce trainers ----

ChannelHandle* param_channel(FlState& s) { return s.ctx->channel_with_tag("fetch"); }

void t_initialize_ring(FlState& s) {
  t_initialize(s);
  auto& ring = s.ctx->require_tag("ring_allreduce");
  s.members = {s.ctx->worker_id()};
  for (const auto& e : ring.ends()) s.members.push_back(e.worker_id);
  std::sort(s.members.begin(), s.members.end());
  if (param_channel(s) != nullptr) {
    const auto leaders = hybrid_leaders(s.ctx->manifest());
    auto it = leaders.find(ring.my_end().group);
    if (it == leaders.end()) throw PeersUnavailable(s.ctx->worker_id() + " has no group leader");
    s.leader = it->second;
  }
}

void t_fetch_ring(FlState& s) {
  auto* param = param_channel(s);
  if (param == nullptr) {
    ++s.round;
    begin_round(s);
    return;
  }
  auto& ring = s.ctx->require_tag("ring_allreduce");
  Message msg;
  if (s.ctx->worker_id() == s.leader) {
    t_fetch_trainer(s);
    msg = s.done ? weights_message("ring_allreduce", kind::kEndOfTrain, s.round, s.weights)
                 : weights_message("ring_allreduce", kind::kWeights, s.round, s.weights);
    for (const auto& end : ring.ends()) s.ctx->send(ring, end, msg);
    return;
  }
  auto leader = ring.peer(s.leader);
  if (!leader) throw PeersUnavailable(s.ctx->worker_id() + " lost its leader " + s.leader);
  msg = s.ctx->recv(ring, *leader, s.ctx->round_timeout);
  if (msg.get("kind") == kind::kEndOfTrain) {
    s.done = true;
    return;
  }
  s.weights = deserialize(msg.payload);
  s.round = hdr_int(msg, channel::header::kRound);
  begin_round(s);
}

void t_allreduce(FlState& s) {
  if (s.done) return;
  auto& ring = s.ctx->require_tag("ring_allreduce");
  const auto n = static_cast<double>(s.local.sample_count);
  std::vector<double> v;
  v.reserve(s.local.weights.size() + 3);
  for (double w : s.local.weights.values) v.push_back(n * w);
  v.push_back(n * s.pre_loss);
  v.push_back(n * s.acc);
  v.push_back(n);

  const auto m = s.members.size();
  if (m > 1) {
    const auto me = static_cast<std::size_t>(
        std::find(s.members.begin(), s.members.end(), s.ctx->worker_id()) - s.members.begin());
    auto next = ring.peer(s.members[(me + 1) % m]);
    auto prev = ring.peer(s.members[(me + m - 1) % m]);
    if (!next || !prev) throw PeersUnavailable(s.ctx->worker_id() + " lost a ring neighbour");
    auto bounds = [&](std::size_t c) { return std::pair{c * v.size() / m, (c + 1) * v.size() / m}; };
    auto exchange = [&](std::size_t send_c, std::size_t recv_c, int step, bool add) {
      auto [lo, hi] = bounds(send_c);
      ModelWeights chunk{std::vector<double>(v.begin() + static_cast<long>(lo), v.begin() + static_cast<long>(hi)),
                         {hi - lo}};
      auto msg = weights_message("ring_allreduce", kind::kRing, s.round, chunk);
      msg.headers["step"] = std::to_string(step);
      s.ctx->send(ring, *next, std::move(msg));
      auto in = s.ctx->recv(ring, *prev, s.ctx->round_timeout);
      auto got = deserialize(in.payload);
      auto [rlo, rhi] = bounds(recv_c);
      if (got.size() != rhi - rlo) throw ShapeMismatch("ring chunk size mismatch");
      for (std::size_t i = rlo; i < rhi; ++i) v[i] = add ? v[i] + got.values[i - rlo] : got.values[i - rlo];
    };
    int step = 0;
    for (std::size_t k = 0; k + 1 < m; ++k) exchange((me + m - k) % m, (me + 2 * m - k - 1) % m, step++, true);
    for (std::size_t k = 0; k + 1 < m; ++k) exchange((me + 1 + m - k) % m, (me + m - k) % m, step++, false);
  }

  const double total = v.back();
  s.group_samples = static_cast<std::uint64_t>(total);
  s.group_acc = v[v.size() - 2] / total;
  s.group_loss = v[v.size() - 3] / total;
  s.weights.values.assign(v.begin(), v.end() - 3);
  for (auto& w : s.weights.values) w /= total;
  if (param_channel(s) == nullptr) {
    s.ctx->result.global_weights = s.weights;
    if (s.members.front() == s.ctx->worker_id()) s.ctx->metrics.checkpoint(s.round, s.weights);
  }
}

void t_upload_ring(FlState& s) {
  if (s.done) return;
  auto* param = param_channel(s);
  if (param != nullptr && s.ctx->worker_id() == s.leader)
    send_update(s, s.ctx->require_tag("upload"), *s.upstream, s.weights, s.group_samples, s.group_loss,
                s.group_acc);
  if (param == nullptr)
    finish_round(s, s.group_loss, s.group_acc);
  else
    finish_round(s, s.post_loss, accuracy(s.local.weights, *s.data));
}

// ---- chains ----

Program with_loop(Program head, int rounds, const Program& body) {
  if (rounds <= 0) return head;
  return head >> tasklet::loop<FlState>(round_limit, body);
}

Program trainer_chain(int rounds) {
  Program head = T(tasklet<FlState>("load_data", t_load_data)) >> tasklet<FlState>("initialize", t_initialize);
  return with_loop(head, rounds,
                   tasklet<FlState>("fetch", t_fetch_trainer) >> tasklet<FlState>("train", t_train) >>
                       tasklet<FlState>("evaluate", t_evaluate) >> tasklet<FlState>("upload", t_upload_trainer));
}

Program aggregator_chain(int rounds) {
  return with_loop(Program(tasklet<FlState>("initialize", t_initialize_aggregator)), rounds,
                   tasklet<FlState>("fetch", t_fetch_aggregator) >> tasklet<FlState>("distribute", t_distribute) >>
                       tasklet<FlState>("gather", t_gather) >> tasklet<FlState>("aggregate", t_aggregate) >>
                       tasklet<FlState>("upload", t_upload_aggregator));
}

Program coordinator_chain(int rounds) {
  return with_loop(Program(tasklet<FlState>("initialize", t_initialize_coordinator)), rounds,
                   tasklet<FlState>("assign", t_assign) >> tasklet<FlState>("collect", t_collect));
}

Program coord_aggregator_chain(int rounds) {
  Program body = tasklet<FlState>("get_assignment", t_get_assignment_aggregator) >>
                 tasklet<FlState>("fetch", t_fetch_aggregator);
  body = body >> tasklet<FlState>("distribute", t_distribute) >> tasklet<FlState>("gather", t_gather) >>
         tasklet<FlState>("aggregate", t_aggregate) >> tasklet<FlState>("upload", t_upload_aggregator) >>
         tasklet<FlState>("report", t_report);
  return with_loop(Program(tasklet<FlState>("initialize", t_initialize_aggregator)), rounds, body);
}

Program coord_trainer_chain(int rounds) {
  Program head = T(tasklet<FlState>("load_data", t_load_data)) >> tasklet<FlState>("initialize", t_initialize);
  Program body = tasklet<FlState>("get_assignment", t_get_assignment_trainer) >>
                 tasklet<FlState>("fetch", t_fetch_trainer);
  body = body >> tasklet<FlState>("train", t_train) >> tasklet<FlState>("evaluate", t_evaluate) >>
         tasklet<FlState>("upload", t_upload_trainer);
  return with_loop(head, rounds, body);
}

Program ring_trainer_chain(int rounds) {
  Program head = T(tasklet<FlState>("load_data", t_load_data)) >> tasklet<FlState>("initialize", t_initialize_ring);
  Program body = tasklet<FlState>("fetch", t_fetch_ring) >> tasklet<FlState>("train", t_train);
  body = body >> tasklet<FlState>("evaluate", t_evaluate) >> tasklet<FlState>("allreduce", t_allreduce) >>
         tasklet<FlState>("upload", t_upload_ring);
  return with_loop(head, rounds, body);
}

std::mutex& registry_mutex() {
  static std::mutex mu;
  return mu;
}

std::map<std::string, ProgramFactory>& registry() {
  static std::map<std::string, ProgramFactory> r{
      {"trainer", [](const TaskManifest& m) { return trainer_chain(rounds_of(m)); }},
      {"aggregator",
       [](const TaskManifest& m) {
         return m.channel_with_tag("fetch") == nullptr ? global_aggregator_chain(rounds_of(m))
                                                       : aggregator_chain(rounds_of(m));
       }},
      {"global-aggregator", [](const TaskManifest& m) { return global_aggregator_chain(rounds_of(m)); }},
      {"coordinator", [](const TaskManifest& m) { return coordinator_chain(rounds_of(m)); }},
      {"coord-trainer", [](const TaskManifest& m) { return coord_trainer_chain(rounds_of(m)); }},
      {"coord-aggregator", [](const TaskManifest& m) { return coord_aggregator_chain(rounds_of(m)); }},
      {"coord-global-aggregator",
       [](const TaskManifest& m) { return coord_global_aggregator_from_base(rounds_of(m)); }},
      {"hybrid-trainer", [](const TaskManifest& m) { return ring_trainer_chain(rounds_of(m)); }},
      {"dist-trainer", [](const TaskManifest& m) { return ring_trainer_chain(rounds_of(m)); }},
  };
  return r;
}

}  // namespace

Program global_aggregator_chain(int rounds) {
  Program body = tasklet<FlState>("distribute", t_distribute) >> tasklet<FlState>("gather", t_gather);
  body = body >> tasklet<FlState>("aggregate", t_aggregate);
  return with_loop(Program(tasklet<FlState>("initialize", t_initialize_aggregator)), rounds, body) >>
         tasklet<FlState>("end_of_train", t_end_of_train);
}

Program coord_global_aggregator_from_base(int rounds) {
  auto chain = global_aggregator_chain(rounds);
  if (chain.contains("distribute"))
    chain.get_tasklet("distribute").insert_before(tasklet<FlState>("get_coord_ends", t_get_coord_ends));
  chain.get_tasklet("end_of_train").remove();
  return chain;
}

Program coord_global_aggregator_chain(int rounds) {
  Program body = tasklet<FlState>("get_coord_ends", t_get_coord_ends) >> tasklet<FlState>("distribute", t_distribute);
  body = body >> tasklet<FlState>("gather", t_gather) >> tasklet<FlState>("aggregate", t_aggregate);
  return with_loop(Program(tasklet<FlState>("initialize", t_initialize_aggregator)), rounds, body);
}

std::map<std::string, std::string> hybrid_leaders(const TaskManifest& m) {
  // The parameter channel as seen from this worker, and the trainer role on it.
  const ManifestChannel* param = m.channel_with_tag("fetch");
  if (param == nullptr || m.channel_with_tag("ring_allreduce") == nullptr) param = m.channel_with_tag("distribute");
  if (param == nullptr) return {};
  auto has_self_channel = [&](const std::string& role) -> const expansion::ChannelLink* {
    for (const auto& l : m.links)
      if (l.pair.first == role && l.pair.second == role) return &l;
    return nullptr;
  };
  std::string trainer_role = param->pair.first;
  const auto* ring = has_self_channel(trainer_role);
  if (ring == nullptr) {
    trainer_role = param->pair.second;
    ring = has_self_channel(trainer_role);
  }
  if (ring == nullptr) return {};
  const auto& agg_role = param->pair.first == trainer_role ? param->pair.second : param->pair.first;

  struct Best {
    std::string id;
    double bps = -1;
  };
  std::map<std::string, Best> best;
  for (const auto* t : m.workers_with_role(trainer_role)) {
    auto g = t->bindings.find(ring->name);
    auto pg = t->bindings.find(param->name);
    if (g == t->bindings.end() || pg == t->bindings.end()) continue;
    double bps = 0;
    for (const auto* a : m.workers_with_role(agg_role)) {
      auto ag = a->bindings.find(param->name);
      if (ag == a->bindings.end() || ag->second != pg->second) continue;
      double link = channel::link_bandwidth(param->bandwidth, t->worker_id, a->worker_id);
      bps = link == 0 ? std::numeric_limits<double>::infinity() : link;
      break;
    }
    auto& b = best[g->second];
    if (bps > b.bps || (bps == b.bps && t->worker_id < b.id)) b = {t->worker_id, bps};
  }
  std::map<std::string, std::string> out;
  for (const auto& [group, b] : best) out[group] = b.id;
  return out;
}

Program build_program(const TaskManifest& m) {
  std::lock_guard lock(registry_mutex());
  auto it = registry().find(m.program);
  if (it == registry().end()) throw UnknownProgram("no program named '" + m.program + "'");
  return it->second(m);
}

void register_program(const std::string& name, ProgramFactory factory) {
  std::lock_guard lock(registry_mutex());
  registry()[name] = std::move(factory);
}

std::vector<std::string> program_names() {
  std::lock_guard lock(registry_mutex());
  std::vector<std::string> out;
  for (const auto& [name, f] : registry()) out.push_back(name);
  return out;
}

}  // namespace flame::fl
