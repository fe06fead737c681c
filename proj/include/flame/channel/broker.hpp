// SPDX-License-Identifier: Apache-2.0
// Topic-based publish/subscribe with MQTT semantics: '/'-separated topics,
// '+' matches one level, '#' matches the rest, retained messages are
// replayed to new subscribers and cleared by an empty retained publish.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "flame/channel/message.hpp"

namespace flame::channel {

bool topic_matches(std::string_view pattern, std::string_view topic);

class Broker {
 public:
  using Callback = std::function<void(const std::string& topic, const Bytes& payload)>;

  virtual ~Broker() = default;
  virtual std::uint64_t subscribe(const std::string& pattern, Callback cb) = 0;
  virtual void unsubscribe(std::uint64_t id) = 0;
  virtual void publish(const std::string& topic, Bytes payload, bool retain = false) = 0;
  // Retained publish that a remote broker clears when this client goes away.
  virtual void publish_owned(const std::string& topic, Bytes payload) { publish(topic, std::move(payload), true); }
  // Returns once everything published or subscribed so far has been
  // dispatched to this client's callbacks.
  virtual void sync() {}
};

// In-process broker. Callbacks run synchronously on the publishing thread,
// one dispatch at a time across the whole broker.
class LocalBroker : public Broker {
 public:
  std::uint64_t subscribe(const std::string& pattern, Callback cb) override;
  void unsubscribe(std::uint64_t id) override;
  void publish(const std::string& topic, Bytes payload, bool retain = false) override;

  std::size_t subscription_count() const;
  std::size_t retained_count() const;

 private:
  struct Subscription {
    std::uint64_t id;
    std::string pattern;
    Callback cb;
  };

  mutable std::recursive_mutex mu_;
  std::uint64_t next_id_ = 1;
  std::vector<Subscription> subs_;
  std::map<std::string, Bytes> retained_;
};

}  // namespace flame::channel
