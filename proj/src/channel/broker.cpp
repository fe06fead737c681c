// SPDX-License-Identifier: Apache-2.0
#include "flame/channel/broker.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

namespace flame::channel {

bool topic_matches(std::string_view pattern, std::string_view topic) {
  std::size_t p = 0;
  std::size_t t = 0;
  while (true) {
    auto pe = pattern.find('/', p);
    auto te = topic.find('/', t);
    auto pseg = pattern.substr(p, pe == std::string_view::npos ? std::string_view::npos : pe - p);
    if (pseg == "#") return true;
    if (t > topic.size()) return false;
    auto tseg = topic.substr(t, te == std::string_view::npos ? std::string_view::npos : te - t);
    if (pseg != "+" && pseg != tseg) return false;
    const bool plast = pe == std::string_view::npos;
    const bool tlast = te == std::string_view::npos;
    if (plast || tlast) {
      if (plast && tlast) return true;
      // "a/#" also matches "a".
      return tlast && pattern.substr(pe + 1) == "#";
    }
    p = pe + 1;
    t = te + 1;
  }
}

namespace {

void deliver_safely(const Broker::Callback& cb, const std::string& topic, const Bytes& payload) {
  try {
    cb(topic, payload);
  } catch (const std::exception& e) {
    spdlog::warn("broker subscriber on '{}' threw: {}", topic, e.what());
  }
}

}  // namespace

std::uint64_t LocalBroker::subscribe(const std::string& pattern, Callback cb) {
  std::lock_guard lock(mu_);
  auto id = next_id_++;
  subs_.push_back({id, pattern, cb});
  for (const auto& [topic, payload] : retained_)
    if (topic_matches(pattern, topic)) deliver_safely(cb, topic, payload);
  return id;
}

void LocalBroker::unsubscribe(std::uint64_t id) {
  std::lock_guard lock(mu_);
  std::erase_if(subs_, [&](const Subscription& s) { return s.id == id; });
}

void LocalBroker::publish(const std::string& topic, Bytes payload, bool retain) {
  std::lock_guard lock(mu_);
  if (retain) {
    if (payload.empty())
      retained_.erase(topic);
    else
      retained_[topic] = payload;
  }
  // Copy: a callback may subscribe or unsubscribe.
  std::vector<std::pair<std::uint64_t, Callback>> targets;
  for (const auto& s : subs_)
    if (topic_matches(s.pattern, topic)) targets.emplace_back(s.id, s.cb);
  for (const auto& [id, cb] : targets) {
    bool live = std::any_of(subs_.begin(), subs_.end(), [&](const Subscription& s) { return s.id == id; });
    if (live) deliver_safely(cb, topic, payload);
  }
}

std::size_t LocalBroker::subscription_count() const {
  std::lock_guard lock(mu_);
  return subs_.size();
}

std::size_t LocalBroker::retained_count() const {
  std::lock_guard lock(mu_);
  return retained_.size();
}

}  // namespace flame::channel
