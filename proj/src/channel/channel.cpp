// SPDX-License-Identifier: Apache-2.0
#include "flame/channel/channel.hpp"

#include <fnmatch.h>

#include <algorithm>

namespace flame::channel {

double link_bandwidth(const BandwidthShape& shape, const std::string& a, const std::string& b) {
  double bps = 0;
  for (const auto& [pattern, rate] : shape) {
    if (::fnmatch(pattern.c_str(), a.c_str(), 0) != 0 && ::fnmatch(pattern.c_str(), b.c_str(), 0) != 0) continue;
    bps = bps == 0 ? rate : std::min(bps, rate);
  }
  return bps;
}

namespace {

Clock::time_point deadline_for(std::optional<Duration> timeout) {
  return timeout ? Clock::now() + *timeout : Clock::time_point::max();
}

}  // namespace

FifoStream::FifoStream(std::shared_ptr<detail::Inbox> inbox, std::vector<EndId> ends)
    : inbox_(std::move(inbox)), remaining_(std::move(ends)) {}

std::optional<FifoItem> FifoStream::next(std::optional<Duration> timeout) {
  const auto deadline = deadline_for(timeout);
  std::unique_lock lock(inbox_->mu);
  while (true) {
    if (remaining_.empty()) return std::nullopt;
    if (inbox_->closed) throw ChannelClosed("channel left while receiving");
    const auto now = Clock::now();
    auto wake = deadline;
    std::optional<std::size_t> best;
    const detail::Pending* best_msg = nullptr;
    std::optional<std::size_t> gone;
    for (std::size_t i = 0; i < remaining_.size(); ++i) {
      auto it = inbox_->queues.find(remaining_[i].worker_id);
      if (it == inbox_->queues.end() || it->second.empty()) {
        if (!gone && inbox_->departed.contains(remaining_[i].worker_id)) gone = i;
        continue;
      }
      const auto& front = it->second.front();
      if (front.ready > now) {
        wake = std::min(wake, front.ready);
        continue;
      }
      if (best_msg == nullptr || std::tie(front.ready, front.order) < std::tie(best_msg->ready, best_msg->order)) {
        best = i;
        best_msg = &front;
      }
    }
    if (best) {
      auto& q = inbox_->queues[remaining_[*best].worker_id];
      FifoItem item{remaining_[*best], std::move(q.front().msg)};
      q.pop_front();
      remaining_.erase(remaining_.begin() + static_cast<std::ptrdiff_t>(*best));
      return item;
    }
    if (gone) {
      FifoItem item{remaining_[*gone], std::nullopt};
      remaining_.erase(remaining_.begin() + static_cast<std::ptrdiff_t>(*gone));
      return item;
    }
    if (now >= deadline) throw RecvTimeout("no message from " + std::to_string(remaining_.size()) + " end(s)");
    if (wake == Clock::time_point::max())
      inbox_->cv.wait(lock);
    else
      inbox_->cv.wait_until(lock, wake);
  }
}

ChannelHandle::ChannelHandle(ChannelConfig config, std::shared_ptr<Transport> transport)
    : config_(std::move(config)), transport_(std::move(transport)) {}

ChannelHandle::~ChannelHandle() {
  try {
    if (joined()) leave();
  } catch (...) {
  }
}

bool ChannelHandle::admits_role(const std::string& role) const {
  if (self_channel()) return true;
  const auto& other = config_.pair.first == config_.role ? config_.pair.second : config_.pair.first;
  return role == other;
}

void ChannelHandle::join() {
  std::lock_guard lock(mu_);
  if (token_) throw AlreadyJoined(config_.end.str() + " already joined");
  auto inbox = std::make_shared<detail::Inbox>();
  Attachment a;
  a.job_id = config_.job_id;
  a.end = config_.end;
  a.role = config_.role;
  a.on_message = [inbox, shape = config_.bandwidth, me = config_.end.worker_id](Message msg) {
    const auto sender = msg.sender();
    const double bps = link_bandwidth(shape, sender, me);
    std::lock_guard l(inbox->mu);
    if (inbox->closed) return;
    auto ready = Clock::now();
    if (bps > 0) {
      auto& free_at = inbox->link_free[sender];
      auto transfer = std::chrono::duration<double>(static_cast<double>(msg.payload.size()) * 8.0 / bps);
      ready = std::max(ready, free_at) + std::chrono::duration_cast<Clock::duration>(transfer);
      free_at = ready;
    }
    inbox->queues[sender].push_back({std::move(msg), ready, inbox->next_order++});
    inbox->cv.notify_all();
  };
  a.on_join = [this, inbox](const EndId& end, const std::string& role) {
    if (!admits_role(role)) return;
    std::lock_guard l(inbox->mu);
    inbox->peers[end.worker_id] = end;
    inbox->departed.erase(end.worker_id);
    inbox->cv.notify_all();
  };
  a.on_leave = [inbox](const std::string& worker) {
    std::lock_guard l(inbox->mu);
    if (inbox->peers.erase(worker) > 0) inbox->departed.insert(worker);
    inbox->cv.notify_all();
  };
  inbox_ = inbox;
  try {
    token_ = transport_->attach(std::move(a));
  } catch (...) {
    inbox_.reset();
    throw;
  }
}

void ChannelHandle::leave() {
  std::shared_ptr<detail::Inbox> inbox;
  std::uint64_t token;
  {
    std::lock_guard lock(mu_);
    if (!token_) throw NotJoined(config_.end.str() + " is not joined");
    token = *token_;
    token_.reset();
    inbox = std::move(inbox_);
  }
  transport_->detach(token);
  std::lock_guard l(inbox->mu);
  inbox->closed = true;
  inbox->queues.clear();
  inbox->cv.notify_all();
}

bool ChannelHandle::joined() const {
  std::lock_guard lock(mu_);
  return token_.has_value();
}

std::shared_ptr<detail::Inbox> ChannelHandle::inbox() const {
  std::lock_guard lock(mu_);
  if (!token_) throw ChannelClosed(config_.end.str() + " is not joined");
  return inbox_;
}

std::map<std::string, EndId> ChannelHandle::peer_snapshot() const {
  auto box = inbox();
  std::lock_guard l(box->mu);
  return box->peers;
}

void ChannelHandle::send(const EndId& end, Message msg) {
  std::uint64_t token;
  std::shared_ptr<detail::Inbox> box;
  {
    std::lock_guard lock(mu_);
    if (!token_) throw ChannelClosed(config_.end.str() + " is not joined");
    token = *token_;
    box = inbox_;
  }
  bool known = self_channel() && end == config_.end;
  if (!known) {
    std::lock_guard l(box->mu);
    auto it = box->peers.find(end.worker_id);
    known = it != box->peers.end() && it->second == end;
  }
  if (!known) throw SendToUnknownEnd(end.str() + " is not a peer of " + config_.end.str());
  msg.headers[header::kSender] = config_.end.worker_id;
  msg.headers[header::kSeq] = std::to_string(++seq_);
  msg.headers.try_emplace(header::kFuncTag, "");
  transport_->send(token, end, msg);
  bytes_sent_ += msg.payload.size();
}

Message ChannelHandle::recv(const EndId& end, std::optional<Duration> timeout) {
  auto box = inbox();
  const auto deadline = deadline_for(timeout);
  std::unique_lock l(box->mu);
  while (true) {
    if (box->closed) throw ChannelClosed(config_.end.str() + " left while receiving");
    const auto now = Clock::now();
    auto& q = box->queues[end.worker_id];
    auto wake = deadline;
    if (!q.empty()) {
      if (q.front().ready <= now) {
        auto msg = std::move(q.front().msg);
        q.pop_front();
        return msg;
      }
      wake = std::min(wake, q.front().ready);
    } else if (box->departed.contains(end.worker_id)) {
      throw PeerLeft(end.str() + " left the channel");
    }
    if (now >= deadline) throw RecvTimeout("no message from " + end.str());
    if (wake == Clock::time_point::max())
      box->cv.wait(l);
    else
      box->cv.wait_until(l, wake);
  }
}

FifoStream ChannelHandle::recv_fifo(std::vector<EndId> ends) { return FifoStream(inbox(), std::move(ends)); }

std::optional<Message> ChannelHandle::peek(const EndId& end) {
  auto box = inbox();
  std::lock_guard l(box->mu);
  auto it = box->queues.find(end.worker_id);
  if (it == box->queues.end() || it->second.empty() || it->second.front().ready > Clock::now()) return std::nullopt;
  return it->second.front().msg;
}

void ChannelHandle::broadcast(const Message& msg) {
  for (const auto& [worker, end] : peer_snapshot()) send(end, msg);
}

std::vector<EndId> ChannelHandle::ends() const {
  std::vector<EndId> out;
  Filter filter;
  {
    std::lock_guard lock(mu_);
    filter = filter_;
  }
  for (const auto& [worker, end] : peer_snapshot())
    if (!filter || filter(end)) out.push_back(end);
  std::sort(out.begin(), out.end());
  return out;
}

bool ChannelHandle::empty() const { return peer_snapshot().empty(); }

void ChannelHandle::set_filter(Filter f) {
  std::lock_guard lock(mu_);
  filter_ = std::move(f);
}

bool ChannelHandle::wait_for_peers(const std::set<std::string>& workers, Duration timeout) const {
  auto box = inbox();
  std::unique_lock l(box->mu);
  return box->cv.wait_for(l, timeout, [&] {
    return box->closed || std::all_of(workers.begin(), workers.end(),
                                      [&](const std::string& w) { return box->peers.contains(w); });
  }) && !box->closed;
}

std::optional<EndId> ChannelHandle::peer(const std::string& worker_id) const {
  auto peers = peer_snapshot();
  auto it = peers.find(worker_id);
  if (it == peers.end()) return std::nullopt;
  return it->second;
}

}  // namespace flame::channel
