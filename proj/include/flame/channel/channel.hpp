// SPDX-License-Identifier: Apache-2.0
// Channel handle: one worker's end of one channel, with the join / leave /
// send / recv / recv_fifo / peek / broadcast / ends / empty operations.
#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "flame/channel/message.hpp"
#include "flame/channel/transport.hpp"
#include "flame/tag/job_spec.hpp"

namespace flame::channel {

FLAME_DEFINE_ERROR(AlreadyJoined);
FLAME_DEFINE_ERROR(NotJoined);
FLAME_DEFINE_ERROR(PeerLeft);
FLAME_DEFINE_ERROR(RecvTimeout);

using Clock = std::chrono::steady_clock;
using Duration = std::chrono::milliseconds;
using BandwidthShape = std::vector<std::pair<std::string, double>>;

// Bits per second on the link between workers `a` and `b`: the smallest
// rate among patterns (shell globs over worker ids) matching either side.
// 0 means unshaped.
double link_bandwidth(const BandwidthShape& shape, const std::string& a, const std::string& b);

struct ChannelConfig {
  std::string job_id;
  std::string channel;
  std::pair<std::string, std::string> pair;
  std::string role;
  EndId end;
  BandwidthShape bandwidth;
};

namespace detail {

struct Pending {
  Message msg;
  Clock::time_point ready;
  std::uint64_t order;
};

struct Inbox {
  std::mutex mu;
  std::condition_variable cv;
  bool closed = false;
  std::map<std::string, EndId> peers;
  std::set<std::string> departed;
  std::map<std::string, std::deque<Pending>> queues;
  std::map<std::string, Clock::time_point> link_free;
  std::uint64_t next_order = 0;
};

}  // namespace detail

struct FifoItem {
  EndId end;
  std::optional<Message> msg;  // empty when the end left without a pending message
  bool peer_left() const { return !msg.has_value(); }
};

// Yields one message per listed end in order of arrival.
class FifoStream {
 public:
  FifoStream(std::shared_ptr<detail::Inbox> inbox, std::vector<EndId> ends);
  // nullopt once every end has produced an item; RecvTimeout if nothing
  // arrives before `timeout`.
  std::optional<FifoItem> next(std::optional<Duration> timeout = std::nullopt);
  const std::vector<EndId>& remaining() const { return remaining_; }

 private:
  std::shared_ptr<detail::Inbox> inbox_;
  std::vector<EndId> remaining_;
};

class ChannelHandle {
 public:
  using Filter = std::function<bool(const EndId&)>;

  ChannelHandle(ChannelConfig config, std::shared_ptr<Transport> transport);
  ~ChannelHandle();
  ChannelHandle(const ChannelHandle&) = delete;
  ChannelHandle& operator=(const ChannelHandle&) = delete;

  void join();
  void leave();
  bool joined() const;

  void send(const EndId& end, Message msg);
  Message recv(const EndId& end, std::optional<Duration> timeout = std::nullopt);
  FifoStream recv_fifo(std::vector<EndId> ends);
  std::optional<Message> peek(const EndId& end);
  void broadcast(const Message& msg);
  std::vector<EndId> ends() const;
  bool empty() const;

  void set_filter(Filter f);
  // Blocks until every listed worker is a peer; false on timeout.
  bool wait_for_peers(const std::set<std::string>& workers, Duration timeout) const;
  std::optional<EndId> peer(const std::string& worker_id) const;

  const EndId& my_end() const { return config_.end; }
  const ChannelConfig& config() const { return config_; }
  tag::BackendKind backend() const { return transport_->kind(); }
  bool self_channel() const { return config_.pair.first == config_.pair.second; }
  std::uint64_t bytes_sent() const { return bytes_sent_; }

 private:
  bool admits_role(const std::string& role) const;
  std::shared_ptr<detail::Inbox> inbox() const;
  std::map<std::string, EndId> peer_snapshot() const;

  ChannelConfig config_;
  std::shared_ptr<Transport> transport_;
  mutable std::mutex mu_;
  std::shared_ptr<detail::Inbox> inbox_;
  std::optional<std::uint64_t> token_;
  Filter filter_;
  std::atomic<std::uint64_t> seq_{0};
  std::atomic<std::uint64_t> bytes_sent_{0};
};

}  // namespace flame::channel
