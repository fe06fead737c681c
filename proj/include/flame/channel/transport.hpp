// SPDX-License-Identifier: Apache-2.0
// Backends that move frames between channel ends. A transport is shared by
// every handle of one process; membership is announced through retained
// presence topics on the broker for both backends.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "flame/channel/broker.hpp"
#include "flame/channel/message.hpp"
#include "flame/tag/job_spec.hpp"

namespace flame::channel {

FLAME_DEFINE_ERROR(SendToUnknownEnd);
FLAME_DEFINE_ERROR(ChannelClosed);

struct Attachment {
  std::string job_id;
  EndId end;
  std::string role;
  std::function<void(Message)> on_message;
  std::function<void(const EndId&, const std::string& role)> on_join;
  std::function<void(const std::string& worker_id)> on_leave;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual tag::BackendKind kind() const = 0;
  // Returns once the end's presence is published and the presence of ends
  // already on the channel has been reported through on_join.
  virtual std::uint64_t attach(Attachment a) = 0;
  virtual void detach(std::uint64_t token) = 0;
  virtual void send(std::uint64_t token, const EndId& to, const Message& msg) = 0;
};

std::string data_topic(const std::string& job_id, const EndId& end);
std::string presence_topic(const std::string& job_id, const EndId& end);
std::string presence_pattern(const std::string& job_id, const std::string& channel, const std::string& group);

std::shared_ptr<Transport> make_broker_transport(std::shared_ptr<Broker> broker);
std::shared_ptr<Transport> make_p2p_transport(std::shared_ptr<Broker> discovery);

// One broker plus one transport per backend kind.
class Fabric {
 public:
  explicit Fabric(std::shared_ptr<Broker> broker);
  static std::shared_ptr<Fabric> in_process();
  static std::shared_ptr<Fabric> remote(const std::string& host, std::uint16_t port);

  std::shared_ptr<Broker> broker() const { return broker_; }
  std::shared_ptr<Transport> transport(tag::BackendKind kind) const;

 private:
  std::shared_ptr<Broker> broker_;
  std::shared_ptr<Transport> brokered_;
  std::shared_ptr<Transport> p2p_;
};

}  // namespace flame::channel
