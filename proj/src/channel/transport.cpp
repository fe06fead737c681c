// SPDX-License-Identifier: Apache-2.0
#include "flame/channel/transport.hpp"

#include <atomic>
#include <list>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "flame/channel/hub.hpp"
#include "flame/common/net.hpp"

namespace flame::channel {

std::string data_topic(const std::string& job_id, const EndId& end) {
  return job_id + "/" + end.channel + "/" + end.group + "/" + end.worker_id;
}

std::string presence_topic(const std::string& job_id, const EndId& end) {
  return job_id + "/" + end.channel + "/" + end.group + "/$presence/" + end.worker_id;
}

std::string presence_pattern(const std::string& job_id, const std::string& channel, const std::string& group) {
  return job_id + "/" + channel + "/" + group + "/$presence/+";
}

namespace {

Bytes to_bytes(const std::string& s) { return Bytes(s.begin(), s.end()); }

std::string last_segment(const std::string& topic) { return topic.substr(topic.rfind('/') + 1); }

Message decode_published(const Bytes& payload) {
  if (payload.size() < 4) throw FrameError("short frame on broker");
  return decode_frame_body(std::span(payload).subspan(4));
}

class BrokerTransport : public Transport {
 public:
  explicit BrokerTransport(std::shared_ptr<Broker> broker) : broker_(std::move(broker)) {}

  tag::BackendKind kind() const override { return tag::BackendKind::BrokerSim; }

  std::uint64_t attach(Attachment a) override {
    auto state = std::make_shared<Attachment>(std::move(a));
    const auto& end = state->end;
    Entry entry{state, 0, 0};
    entry.data_sub = broker_->subscribe(data_topic(state->job_id, end), [state](const std::string&, const Bytes& p) {
      state->on_message(decode_published(p));
    });
    entry.presence_sub = broker_->subscribe(
        presence_pattern(state->job_id, end.channel, end.group), [state](const std::string& topic, const Bytes& p) {
          auto worker = last_segment(topic);
          if (worker == state->end.worker_id) return;
          if (p.empty()) {
            state->on_leave(worker);
            return;
          }
          auto doc = nlohmann::json::parse(p.begin(), p.end());
          state->on_join(EndId{worker, state->end.channel, state->end.group}, doc.at("role").get<std::string>());
        });
    broker_->publish_owned(presence_topic(state->job_id, end), to_bytes(nlohmann::json{{"role", state->role}}.dump()));
    broker_->sync();
    std::lock_guard lock(mu_);
    auto token = next_++;
    entries_[token] = entry;
    return token;
  }

  void detach(std::uint64_t token) override {
    Entry entry;
    {
      std::lock_guard lock(mu_);
      auto it = entries_.find(token);
      if (it == entries_.end()) return;
      entry = it->second;
      entries_.erase(it);
    }
    broker_->unsubscribe(entry.presence_sub);
    broker_->unsubscribe(entry.data_sub);
    broker_->publish_owned(presence_topic(entry.state->job_id, entry.state->end), {});
    broker_->sync();
  }

  void send(std::uint64_t token, const EndId& to, const Message& msg) override {
    std::string job;
    {
      std::lock_guard lock(mu_);
      auto it = entries_.find(token);
      if (it == entries_.end()) throw ChannelClosed("end is not attached");
      job = it->second.state->job_id;
    }
    broker_->publish(data_topic(job, to), encode_frame(msg));
  }

 private:
  struct Entry {
    std::shared_ptr<Attachment> state;
    std::uint64_t data_sub;
    std::uint64_t presence_sub;
  };

  std::shared_ptr<Broker> broker_;
  std::mutex mu_;
  std::uint64_t next_ = 1;
  std::map<std::uint64_t, Entry> entries_;
};

// Each attached end listens on its own loopback port and publishes it as
// part of its presence. A peer's departure is reported once its presence is
// cleared and every inbound connection from it has drained, so no frame it
// sent before leaving is lost.
class P2PTransport : public Transport {
 public:
  explicit P2PTransport(std::shared_ptr<Broker> discovery) : broker_(std::move(discovery)) {}

  ~P2PTransport() override {
    std::vector<std::uint64_t> tokens;
    {
      std::lock_guard lock(mu_);
      for (const auto& [t, e] : ends_) tokens.push_back(t);
    }
    for (auto t : tokens) detach(t);
  }

  tag::BackendKind kind() const override { return tag::BackendKind::PointToPoint; }

  std::uint64_t attach(Attachment a) override {
    auto end = std::make_shared<End>();
    end->a = std::move(a);
    end->listener = net::listen_loopback();
    end->port = net::local_port(end->listener);
    end->acceptor = std::thread([end] { accept_loop(end); });

    std::weak_ptr<End> weak = end;
    end->presence_sub = broker_->subscribe(
        presence_pattern(end->a.job_id, end->a.end.channel, end->a.end.group),
        [weak](const std::string& topic, const Bytes& p) {
          if (auto e = weak.lock()) on_presence(e, last_segment(topic), p);
        });
    broker_->publish_owned(presence_topic(end->a.job_id, end->a.end),
                           to_bytes(nlohmann::json{{"role", end->a.role}, {"port", end->port}}.dump()));
    broker_->sync();
    std::lock_guard lock(mu_);
    auto token = next_++;
    ends_[token] = end;
    return token;
  }

  void detach(std::uint64_t token) override {
    std::shared_ptr<End> end;
    {
      std::lock_guard lock(mu_);
      auto it = ends_.find(token);
      if (it == ends_.end()) return;
      end = it->second;
      ends_.erase(it);
    }
    broker_->unsubscribe(end->presence_sub);
    std::map<std::string, std::shared_ptr<Outbound>> outbound;
    {
      std::lock_guard lock(end->mu);
      end->closing = true;
      outbound.swap(end->outbound);
    }
    for (auto& [w, out] : outbound) {
      std::lock_guard lock(out->mu);
      out->sock.shutdown_write();
      out->sock.close();
    }
    broker_->publish_owned(presence_topic(end->a.job_id, end->a.end), {});
    end->listener.shutdown();
    if (end->acceptor.joinable()) end->acceptor.join();
    std::list<std::thread> readers;
    {
      std::lock_guard lock(end->mu);
      for (auto* s : end->inbound) s->shutdown();
      readers.swap(end->readers);
    }
    for (auto& t : readers) t.join();
    broker_->sync();
  }

  void send(std::uint64_t token, const EndId& to, const Message& msg) override {
    std::shared_ptr<End> end;
    {
      std::lock_guard lock(mu_);
      auto it = ends_.find(token);
      if (it == ends_.end()) throw ChannelClosed("end is not attached");
      end = it->second;
    }
    std::shared_ptr<Outbound> out;
    {
      std::lock_guard lock(end->mu);
      auto it = end->outbound.find(to.worker_id);
      if (it != end->outbound.end()) {
        out = it->second;
      } else {
        std::uint16_t port = to.worker_id == end->a.end.worker_id ? end->port : 0;
        if (auto addr = end->ports.find(to.worker_id); addr != end->ports.end()) port = addr->second;
        if (port == 0) throw SendToUnknownEnd("no address for " + to.str());
        out = std::make_shared<Outbound>();
        out->sock = net::connect_loopback(port);
        end->outbound[to.worker_id] = out;
      }
    }
    std::lock_guard lock(out->mu);
    try {
      write_frame(out->sock, msg);
    } catch (const net::SocketError& e) {
      throw SendToUnknownEnd("send to " + to.str() + " failed: " + e.what());
    }
  }

 private:
  struct Outbound {
    std::mutex mu;
    net::Socket sock;
  };

  struct End {
    Attachment a;
    net::Socket listener;
    std::uint16_t port = 0;
    std::thread acceptor;
    std::uint64_t presence_sub = 0;

    std::mutex mu;
    bool closing = false;
    std::map<std::string, std::uint16_t> ports;
    std::map<std::string, std::shared_ptr<Outbound>> outbound;
    std::map<std::string, int> open_inbound;
    std::set<std::string> leave_pending;
    std::list<net::Socket*> inbound;
    std::list<std::thread> readers;
  };

  static void accept_loop(std::shared_ptr<End> end) {
    while (true) {
      auto sock = net::accept(end->listener);
      if (!sock.valid()) return;
      auto owned = std::make_shared<net::Socket>(std::move(sock));
      std::lock_guard lock(end->mu);
      if (end->closing) return;
      end->inbound.push_back(owned.get());
      end->readers.emplace_back([end, owned] { read_loop(end, owned); });
    }
  }

  static void read_loop(std::shared_ptr<End> end, std::shared_ptr<net::Socket> sock) {
    std::string sender;
    try {
      while (auto frame = read_frame(*sock)) {
        if (sender.empty()) {
          sender = frame->sender();
          std::lock_guard lock(end->mu);
          ++end->open_inbound[sender];
        }
        end->a.on_message(std::move(*frame));
      }
    } catch (const std::exception& e) {
      spdlog::debug("p2p inbound connection ended: {}", e.what());
    }
    bool report_leave = false;
    {
      std::lock_guard lock(end->mu);
      end->inbound.remove(sock.get());
      if (!sender.empty() && --end->open_inbound[sender] == 0) {
        end->open_inbound.erase(sender);
        report_leave = end->leave_pending.erase(sender) > 0;
      }
    }
    if (report_leave) end->a.on_leave(sender);
  }

  static void on_presence(const std::shared_ptr<End>& end, const std::string& worker, const Bytes& p) {
    if (worker == end->a.end.worker_id) return;
    if (p.empty()) {
      bool now = false;
      std::shared_ptr<Outbound> out;
      {
        std::lock_guard lock(end->mu);
        end->ports.erase(worker);
        if (auto it = end->outbound.find(worker); it != end->outbound.end()) {
          out = it->second;
          end->outbound.erase(it);
        }
        if (end->open_inbound.contains(worker))
          end->leave_pending.insert(worker);
        else
          now = true;
      }
      if (out) {
        std::lock_guard lock(out->mu);
        out->sock.close();
      }
      if (now) end->a.on_leave(worker);
      return;
    }
    auto doc = nlohmann::json::parse(p.begin(), p.end());
    {
      std::lock_guard lock(end->mu);
      end->ports[worker] = doc.at("port").get<std::uint16_t>();
      end->leave_pending.erase(worker);
    }
    end->a.on_join(EndId{worker, end->a.end.channel, end->a.end.group}, doc.at("role").get<std::string>());
  }

  std::shared_ptr<Broker> broker_;
  std::mutex mu_;
  std::uint64_t next_ = 1;
  std::map<std::uint64_t, std::shared_ptr<End>> ends_;
};

}  // namespace

std::shared_ptr<Transport> make_broker_transport(std::shared_ptr<Broker> broker) {
  return std::make_shared<BrokerTransport>(std::move(broker));
}

std::shared_ptr<Transport> make_p2p_transport(std::shared_ptr<Broker> discovery) {
  return std::make_shared<P2PTransport>(std::move(discovery));
}

Fabric::Fabric(std::shared_ptr<Broker> broker)
    : broker_(std::move(broker)), brokered_(make_broker_transport(broker_)), p2p_(make_p2p_transport(broker_)) {}

std::shared_ptr<Fabric> Fabric::in_process() { return std::make_shared<Fabric>(std::make_shared<LocalBroker>()); }

std::shared_ptr<Fabric> Fabric::remote(const std::string& host, std::uint16_t port) {
  return std::make_shared<Fabric>(std::make_shared<RemoteBroker>(host, port));
}

std::shared_ptr<Transport> Fabric::transport(tag::BackendKind kind) const {
  return kind == tag::BackendKind::PointToPoint ? p2p_ : brokered_;
}

}  // namespace flame::channel
