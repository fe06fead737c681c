// SPDX-License-Identifier: Apache-2.0
// HTTP/1.1 JSON API and server-sent-event notifier over a Controller.
#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>

#include "flame/control/controller.hpp"

namespace httplib {
class Server;
}

namespace flame::control {

FLAME_DEFINE_ERROR(SubscriberBusy);

// HTTP status for an error code travelling in an error body.
int http_status_for(const std::string& code);

struct ServerOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;  // 0 picks a free port
  std::chrono::milliseconds keepalive{1000};
  std::chrono::milliseconds heartbeat_scan{1000};
  std::size_t threads = 32;
};

class ApiServer {
 public:
  ApiServer(Controller& controller, ServerOptions opts = {});
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  std::uint16_t port() const { return port_; }
  void stop();
  // Blocks until stop() is called from elsewhere.
  void wait();

 private:
  void routes();

  Controller& controller_;
  ServerOptions opts_;
  std::unique_ptr<httplib::Server> http_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread listener_;
  std::thread scanner_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::set<std::string> subscribers_;
};

}  // namespace flame::control
