// SPDX-License-Identifier: Apache-2.0
#include "flame/channel/hub.hpp"

#include <set>

#include <spdlog/spdlog.h>

namespace flame::channel {

struct HubServer::Conn {
  net::Socket sock;
  std::mutex write_mu;
  std::map<std::string, std::uint64_t> subs;  // client sid -> broker id
  std::set<std::string> owned;

  void write(const Message& m) {
    std::lock_guard lock(write_mu);
    try {
      write_frame(sock, m);
    } catch (const std::exception&) {
      // The reader notices the broken connection and cleans up.
    }
  }
};

HubServer::HubServer(std::uint16_t port) : listener_(net::listen_loopback(port)) {
  port_ = net::local_port(listener_);
  acceptor_ = std::thread([this] { accept_loop(); });
}

HubServer::~HubServer() { stop(); }

void HubServer::stop() {
  if (stopping_.exchange(true)) return;
  listener_.shutdown();
  if (acceptor_.joinable()) acceptor_.join();
  std::list<std::thread> threads;
  {
    std::lock_guard lock(mu_);
    for (auto& c : conns_) c->sock.shutdown();
    threads.swap(threads_);
  }
  for (auto& t : threads) t.join();
  listener_.close();
}

void HubServer::accept_loop() {
  while (!stopping_) {
    auto sock = net::accept(listener_);
    if (!sock.valid()) break;
    auto conn = std::make_shared<Conn>();
    conn->sock = std::move(sock);
    std::lock_guard lock(mu_);
    if (stopping_) break;
    conns_.push_back(conn);
    threads_.emplace_back([this, conn] { serve(conn); });
  }
}

void HubServer::serve(std::shared_ptr<Conn> conn) {
  try {
    while (auto frame = read_frame(conn->sock)) {
      const auto op = frame->get("op");
      if (op == "sub") {
        auto sid = frame->get("sid");
        std::weak_ptr<Conn> weak = conn;
        auto id = broker_.subscribe(frame->get("pattern"), [weak, sid](const std::string& topic, const Bytes& payload) {
          if (auto c = weak.lock()) {
            Message out;
            out.headers = {{"op", "msg"}, {"sid", sid}, {"topic", topic}};
            out.payload = payload;
            c->write(out);
          }
        });
        conn->subs[sid] = id;
      } else if (op == "unsub") {
        auto it = conn->subs.find(frame->get("sid"));
        if (it != conn->subs.end()) {
          broker_.unsubscribe(it->second);
          conn->subs.erase(it);
        }
      } else if (op == "pub") {
        const auto topic = frame->get("topic");
        const bool retain = frame->get("retain") == "1";
        if (frame->get("owned") == "1") {
          if (frame->payload.empty())
            conn->owned.erase(topic);
          else
            conn->owned.insert(topic);
        }
        broker_.publish(topic, std::move(frame->payload), retain);
      } else if (op == "ping") {
        Message pong;
        pong.headers = {{"op", "pong"}};
        conn->write(pong);
      }
    }
  } catch (const std::exception& e) {
    if (!stopping_) spdlog::debug("hub connection dropped: {}", e.what());
  }
  for (const auto& [sid, id] : conn->subs) broker_.unsubscribe(id);
  for (const auto& topic : conn->owned) broker_.publish(topic, {}, true);
  std::lock_guard lock(mu_);
  conns_.remove(conn);
}

RemoteBroker::RemoteBroker(const std::string& host, std::uint16_t port) {
  try {
    sock_ = net::connect_to(host, port);
  } catch (const net::SocketError& e) {
    throw BackendUnavailable(std::string("broker hub unreachable: ") + e.what());
  }
  reader_ = std::thread([this] { read_loop(); });
}

RemoteBroker::~RemoteBroker() {
  sock_.shutdown();
  if (reader_.joinable()) reader_.join();
}

void RemoteBroker::send(const Message& m) {
  std::lock_guard lock(write_mu_);
  try {
    write_frame(sock_, m);
  } catch (const net::SocketError& e) {
    throw BackendUnavailable(std::string("broker hub connection lost: ") + e.what());
  }
}

std::uint64_t RemoteBroker::subscribe(const std::string& pattern, Callback cb) {
  std::uint64_t id;
  {
    std::lock_guard lock(mu_);
    id = next_id_++;
    callbacks_[id] = std::move(cb);
  }
  Message m;
  m.headers = {{"op", "sub"}, {"sid", std::to_string(id)}, {"pattern", pattern}};
  send(m);
  return id;
}

void RemoteBroker::unsubscribe(std::uint64_t id) {
  {
    std::lock_guard lock(mu_);
    callbacks_.erase(id);
  }
  Message m;
  m.headers = {{"op", "unsub"}, {"sid", std::to_string(id)}};
  send(m);
}

void RemoteBroker::publish(const std::string& topic, Bytes payload, bool retain) {
  Message m;
  m.headers = {{"op", "pub"}, {"topic", topic}, {"retain", retain ? "1" : "0"}};
  m.payload = std::move(payload);
  send(m);
}

void RemoteBroker::publish_owned(const std::string& topic, Bytes payload) {
  Message m;
  m.headers = {{"op", "pub"}, {"topic", topic}, {"retain", "1"}, {"owned", "1"}};
  m.payload = std::move(payload);
  send(m);
}

void RemoteBroker::sync() {
  std::unique_lock lock(mu_);
  auto target = pongs_ + 1;
  lock.unlock();
  Message ping;
  ping.headers = {{"op", "ping"}};
  send(ping);
  lock.lock();
  cv_.wait(lock, [&] { return pongs_ >= target || closed_; });
  if (pongs_ < target) throw BackendUnavailable("broker hub connection lost");
}

void RemoteBroker::read_loop() {
  try {
    while (auto frame = read_frame(sock_)) {
      const auto op = frame->get("op");
      if (op == "msg") {
        Callback cb;
        {
          std::lock_guard lock(mu_);
          auto it = callbacks_.find(std::stoull(frame->get("sid", "0")));
          if (it == callbacks_.end()) continue;
          cb = it->second;
        }
        try {
          cb(frame->get("topic"), frame->payload);
        } catch (const std::exception& e) {
          spdlog::warn("broker subscriber threw: {}", e.what());
        }
      } else if (op == "pong") {
        std::lock_guard lock(mu_);
        ++pongs_;
        cv_.notify_all();
      }
    }
  } catch (const std::exception& e) {
    spdlog::debug("hub client read ended: {}", e.what());
  }
  std::lock_guard lock(mu_);
  closed_ = true;
  cv_.notify_all();
}

}  // namespace flame::channel
