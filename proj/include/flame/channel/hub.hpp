// SPDX-License-Identifier: Apache-2.0
// Serves a LocalBroker over loopback TCP so that worker processes can share
// one broker, and the matching client.
#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "flame/channel/broker.hpp"
#include "flame/common/net.hpp"

namespace flame::channel {

FLAME_DEFINE_ERROR(BackendUnavailable);

class HubServer {
 public:
  explicit HubServer(std::uint16_t port = 0);
  ~HubServer();
  HubServer(const HubServer&) = delete;
  HubServer& operator=(const HubServer&) = delete;

  std::uint16_t port() const { return port_; }
  LocalBroker& broker() { return broker_; }
  void stop();

 private:
  struct Conn;
  void accept_loop();
  void serve(std::shared_ptr<Conn> conn);

  LocalBroker broker_;
  net::Socket listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::list<std::shared_ptr<Conn>> conns_;
  std::list<std::thread> threads_;
};

// Broker client talking to a HubServer. Topics published with
// `publish_owned` are cleared by the hub when this client disconnects.
class RemoteBroker : public Broker {
 public:
  RemoteBroker(const std::string& host, std::uint16_t port);
  ~RemoteBroker() override;

  std::uint64_t subscribe(const std::string& pattern, Callback cb) override;
  void unsubscribe(std::uint64_t id) override;
  void publish(const std::string& topic, Bytes payload, bool retain = false) override;
  void publish_owned(const std::string& topic, Bytes payload) override;
  void sync() override;

 private:
  void send(const Message& m);
  void read_loop();

  net::Socket sock_;
  std::mutex write_mu_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::uint64_t, Callback> callbacks_;
  std::uint64_t next_id_ = 1;
  std::uint64_t pongs_ = 0;
  bool closed_ = false;
  std::thread reader_;
};

}  // namespace flame::channel
