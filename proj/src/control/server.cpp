// SPDX-License-Identifier: Apache-2.0
#include "flame/control/server.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <map>

#include "flame/expansion/expand.hpp"
#include "flame/tag/job_spec.hpp"

namespace flame::control {

namespace {

const std::map<std::string, int, std::less<>> kStatus{
    {"ParseError", 400},        {"SchemaError", 422},        {"ValidationFailed", 422},
    {"NoComputeForRealm", 422}, {"UnregisteredDataset", 422}, {"MissingGroupAssociation", 422},
    {"UnknownJob", 404},        {"UnknownWorker", 404},       {"NotFound", 404},
    {"DuplicateCompute", 409},  {"DuplicateDataset", 409},    {"WrongState", 409},
    {"SlotAlreadyFilled", 409}, {"JobNotRunning", 409},       {"NotUnmanaged", 409},
    {"SubscriberBusy", 409},
};

void reply(httplib::Response& res, int status, const ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, const std::string& code, const std::string& message,
                 ordered_json extra = ordered_json::object()) {
  ordered_json body{{"error", code}, {"message", message}};
  for (auto& [k, v] : extra.items()) body[k] = v;
  reply(res, http_status_for(code), body);
}

ordered_json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return ordered_json::object();
  try {
    return ordered_json::parse(req.body);
  } catch (const nlohmann::json::parse_error& e) {
    throw tag::ParseError(std::string("request body is not JSON: ") + e.what());
  }
}

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

// Maps exceptions to error bodies.
Handler guarded(Handler h) {
  return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
    try {
      h(req, res);
    } catch (const ValidationFailed& e) {
      ordered_json violations = ordered_json::array();
      for (const auto& v : e.report().violations)
        violations.push_back({{"code", v.code}, {"subject", v.subject}, {"detail", v.detail}});
      reply_error(res, e.code(), e.what(), {{"violations", violations}});
    } catch (const Error& e) {
      reply_error(res, e.code(), e.what());
    } catch (const std::exception& e) {
      spdlog::error("{} {}: {}", req.method, req.path, e.what());
      reply_error(res, "InternalError", e.what());
    }
  };
}

std::string sse_frame(const Event& e) {
  return "id: " + std::to_string(e.id) + "\nevent: " + std::string(to_string(e.kind)) + "\ndata: " + to_json(e).dump() +
         "\n\n";
}

}  // namespace

int http_status_for(const std::string& code) {
  auto it = kStatus.find(code);
  return it == kStatus.end() ? 500 : it->second;
}

ApiServer::ApiServer(Controller& controller, ServerOptions opts)
    : controller_(controller), opts_(std::move(opts)), http_(std::make_unique<httplib::Server>()) {
  const auto threads = opts_.threads;
  http_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  routes();
  if (opts_.port == 0) {
    const int p = http_->bind_to_any_port(opts_.host);
    if (p <= 0) throw Error("BindFailed", "cannot bind " + opts_.host);
    port_ = static_cast<std::uint16_t>(p);
  } else {
    if (!http_->bind_to_port(opts_.host, opts_.port))
      throw Error("BindFailed", "cannot bind " + opts_.host + ":" + std::to_string(opts_.port));
    port_ = opts_.port;
  }
  listener_ = std::thread([this] { http_->listen_after_bind(); });
  scanner_ = std::thread([this] {
    std::unique_lock lock(mu_);
    while (!stopping_) {
      cv_.wait_for(lock, opts_.heartbeat_scan, [this] { return stopping_.load(); });
      if (stopping_) break;
      lock.unlock();
      try {
        controller_.check_heartbeats();
      } catch (const std::exception& e) {
        spdlog::error("heartbeat scan: {}", e.what());
      }
      lock.lock();
    }
  });
  http_->wait_until_ready();
  spdlog::info("api listening on {}:{}", opts_.host, port_);
}

ApiServer::~ApiServer() { stop(); }

void ApiServer::stop() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  http_->stop();
  if (listener_.joinable()) listener_.join();
  if (scanner_.joinable()) scanner_.join();
}

void ApiServer::wait() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [this] { return stopping_.load(); });
}

void ApiServer::routes() {
  auto& s = *http_;
  auto& c = controller_;

  s.Get("/health", [](const httplib::Request&, httplib::Response& res) { reply(res, 200, {{"ok", true}}); });

  s.Post("/computes", guarded([&c](const auto& req, auto& res) {
           reply(res, 201, {{"computeId", c.register_compute(compute_from_json(parse_body(req)))}});
         }));
  s.Get("/computes", guarded([&c](const auto&, auto& res) {
          ordered_json out = ordered_json::array();
          for (const auto& r : c.computes()) out.push_back(to_json(r));
          reply(res, 200, out);
        }));
  s.Post("/datasets", guarded([&c](const auto& req, auto& res) {
           reply(res, 201, {{"datasetId", c.register_dataset(dataset_from_json(parse_body(req)))}});
         }));
  s.Get("/datasets", guarded([&c](const auto&, auto& res) {
          ordered_json out = ordered_json::array();
          for (const auto& r : c.datasets()) out.push_back(to_json(r));
          reply(res, 200, out);
        }));

  s.Post("/jobs", guarded([&c](const auto& req, auto& res) {
           reply(res, 201, {{"jobId", c.create_job(parse_body(req))}});
         }));
  s.Get("/jobs", guarded([&c](const auto&, auto& res) {
          ordered_json out = ordered_json::array();
          for (const auto& id : c.job_ids()) out.push_back(job_status_json(c.job(id)));
          reply(res, 200, out);
        }));
  s.Get(R"(/jobs/([^/]+))", guarded([&c](const auto& req, auto& res) {
          const auto job = c.job(req.matches[1]);
          auto doc = job_status_json(job);
          if (req.has_param("topology") && job.topology)
            doc["topology"] = expansion::topology_to_json(*job.topology, true);
          reply(res, 200, doc);
        }));
  s.Put(R"(/jobs/([^/]+)/start)", guarded([&c](const auto& req, auto& res) {
          const auto body = parse_body(req);
          c.start_job(req.matches[1], body.value("unmanaged", std::vector<std::string>{}));
          reply(res, 200, job_status_json(c.job(req.matches[1])));
        }));
  s.Put(R"(/jobs/([^/]+)/stop)", guarded([&c](const auto& req, auto& res) {
          c.stop_job(req.matches[1]);
          reply(res, 200, job_status_json(c.job(req.matches[1])));
        }));
  s.Put(R"(/jobs/([^/]+)/tasks/([^/]+)/status)", guarded([&c](const auto& req, auto& res) {
          const auto body = parse_body(req);
          const auto status = task_status_from_string(body.value("status", ""));
          if (!status) throw tag::SchemaError("unknown task status '" + body.value("status", "") + "'");
          c.update_task_status(req.matches[1], req.matches[2], *status, body.value("detail", ""));
          reply(res, 200, {{"ok", true}});
        }));
  s.Get(R"(/jobs/([^/]+)/manifests/([^/]+))", guarded([&c](const auto& req, auto& res) {
          reply(res, 200, fl::manifest_to_json(c.manifest(req.matches[1], req.matches[2])));
        }));
  s.Post(R"(/jobs/([^/]+)/slots/([^/]+)/claim)", guarded([&c](const auto& req, auto& res) {
           reply(res, 200, fl::manifest_to_json(c.claim_slot(req.matches[1], req.matches[2])));
         }));

  s.Put(R"(/notify/([^/]+)/ack/(\d+))", guarded([&c](const auto& req, auto& res) {
          c.ack(req.matches[1], std::stoull(req.matches[2]));
          reply(res, 200, {{"ok", true}});
        }));

  s.Get(R"(/notify/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
          const std::string sub = req.matches[1];
          {
            std::lock_guard lock(mu_);
            if (!subscribers_.insert(sub).second) throw SubscriberBusy("subscriber '" + sub + "' is already connected");
          }
          auto last = std::make_shared<std::uint64_t>(0);
          res.set_header("Cache-Control", "no-cache");
          res.set_chunked_content_provider(
              "text/event-stream",
              [this, sub, last](std::size_t, httplib::DataSink& sink) {
                if (stopping_) {
                  sink.done();
                  return true;
                }
                std::vector<Event> events;
                const auto deadline = std::chrono::steady_clock::now() + opts_.keepalive;
                while (events.empty() && !stopping_ && std::chrono::steady_clock::now() < deadline) {
                  events = controller_.wait_events(sub, *last, std::chrono::milliseconds(50));
                  if (events.empty() && !sink.is_writable()) return false;
                }
                std::string out;
                for (const auto& e : events) {
                  out += sse_frame(e);
                  *last = e.id;
                }
                if (out.empty()) out = ": keepalive\n\n";
                return sink.write(out.data(), out.size());
              },
              [this, sub](bool) {
                std::lock_guard lock(mu_);
                subscribers_.erase(sub);
              });
        }));
}

}  // namespace flame::control
