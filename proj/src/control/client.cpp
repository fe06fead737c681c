// SPDX-License-Identifier: Apache-2.0
#include "flame/control/client.hpp"

#include <httplib.h>

namespace flame::control {

namespace {

ordered_json check(const httplib::Result& r, const std::string& what) {
  if (!r) throw ServerUnavailable(what + ": " + httplib::to_string(r.error()));
  ordered_json body;
  try {
    body = r->body.empty() ? ordered_json::object() : ordered_json::parse(r->body);
  } catch (const nlohmann::json::parse_error&) {
    body = {{"message", r->body}};
  }
  if (r->status >= 200 && r->status < 300) return body;
  const auto code = body.is_object() ? body.value("error", "HttpError") : "HttpError";
  const auto message = body.is_object() ? body.value("message", r->body) : r->body;
  throw ApiError(r->status, code, what + ": " + message, body);
}

}  // namespace

ApiClient::ApiClient(std::string host, std::uint16_t port, std::chrono::milliseconds timeout)
    : host_(std::move(host)), port_(port), timeout_(timeout) {}

ApiClient ApiClient::from_url(const std::string& url) {
  auto rest = url;
  if (auto p = rest.find("://"); p != std::string::npos) rest = rest.substr(p + 3);
  while (!rest.empty() && rest.back() == '/') rest.pop_back();
  const auto colon = rest.rfind(':');
  if (colon == std::string::npos) throw Error("BadUrl", "api url needs a port: " + url);
  int port = 0;
  try {
    port = std::stoi(rest.substr(colon + 1));
  } catch (const std::exception&) {
    throw Error("BadUrl", "bad port in " + url);
  }
  if (port <= 0 || port > 65535) throw Error("BadUrl", "bad port in " + url);
  return ApiClient(rest.substr(0, colon), static_cast<std::uint16_t>(port));
}

std::string ApiClient::url() const { return "http://" + host_ + ":" + std::to_string(port_); }

namespace {

httplib::Client make(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout) {
  httplib::Client cli(host, port);
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_write_timeout(timeout);
  return cli;
}

}  // namespace

ordered_json ApiClient::get(const std::string& path) const {
  auto cli = make(host_, port_, timeout_);
  return check(cli.Get(path), "GET " + path);
}

ordered_json ApiClient::post(const std::string& path, const ordered_json& body) const {
  auto cli = make(host_, port_, timeout_);
  return check(cli.Post(path, body.dump(), "application/json"), "POST " + path);
}

ordered_json ApiClient::put(const std::string& path, const ordered_json& body) const {
  auto cli = make(host_, port_, timeout_);
  return check(cli.Put(path, body.dump(), "application/json"), "PUT " + path);
}

std::string ApiClient::register_compute(const ComputeRecord& record) const {
  return post("/computes", to_json(record)).at("computeId").get<std::string>();
}

std::string ApiClient::register_dataset(const DatasetRecord& record) const {
  return post("/datasets", to_json(record)).at("datasetId").get<std::string>();
}

std::string ApiClient::create_job(const ordered_json& document) const {
  return post("/jobs", document).at("jobId").get<std::string>();
}

ordered_json ApiClient::start_job(const std::string& job_id, const std::vector<std::string>& unmanaged) const {
  ordered_json body = ordered_json::object();
  if (!unmanaged.empty()) body["unmanaged"] = unmanaged;
  return put("/jobs/" + job_id + "/start", body);
}

ordered_json ApiClient::stop_job(const std::string& job_id) const { return put("/jobs/" + job_id + "/stop"); }

ordered_json ApiClient::job_status(const std::string& job_id) const { return get("/jobs/" + job_id); }

void ApiClient::report_status(const std::string& job_id, const std::string& worker_id, TaskStatus status,
                              const std::string& detail) const {
  ordered_json body{{"status", to_string(status)}};
  if (!detail.empty()) body["detail"] = detail;
  put("/jobs/" + job_id + "/tasks/" + worker_id + "/status", body);
}

fl::TaskManifest ApiClient::manifest(const std::string& job_id, const std::string& worker_id) const {
  return fl::manifest_from_json(get("/jobs/" + job_id + "/manifests/" + worker_id));
}

fl::TaskManifest ApiClient::claim_slot(const std::string& job_id, const std::string& worker_id) const {
  return fl::manifest_from_json(post("/jobs/" + job_id + "/slots/" + worker_id + "/claim", ordered_json::object()));
}

void ApiClient::ack(const std::string& subscriber, std::uint64_t event_id) const {
  put("/notify/" + subscriber + "/ack/" + std::to_string(event_id));
}

void ApiClient::subscribe(const std::string& subscriber, const std::function<bool(const Event&)>& on_event,
                          const std::function<bool()>& keep_going) const {
  auto cli = make(host_, port_, timeout_);
  cli.set_read_timeout(std::max(timeout_, std::chrono::milliseconds(5000)));
  std::string buffer;
  bool stopped_by_us = false;
  std::string error_body;
  int status = 0;
  auto res = cli.Get(
      "/notify/" + subscriber, httplib::Headers{},
      [&](const httplib::Response& r) {
        status = r.status;
        return true;
      },
      [&](const char* data, std::size_t len) {
        if (status != 200) {
          error_body.append(data, len);
          return true;
        }
        buffer.append(data, len);
        std::size_t end;
        while ((end = buffer.find("\n\n")) != std::string::npos) {
          const auto frame = buffer.substr(0, end);
          buffer.erase(0, end + 2);
          std::string payload;
          std::size_t pos = 0;
          while (pos < frame.size()) {
            auto nl = frame.find('\n', pos);
            if (nl == std::string::npos) nl = frame.size();
            const auto line = frame.substr(pos, nl - pos);
            if (line.rfind("data: ", 0) == 0) payload += line.substr(6);
            pos = nl + 1;
          }
          if (!payload.empty() && !on_event(event_from_json(ordered_json::parse(payload)))) {
            stopped_by_us = true;
            return false;
          }
        }
        if (!keep_going()) {
          stopped_by_us = true;
          return false;
        }
        return true;
      });
  if (stopped_by_us) return;
  if (status != 0 && status != 200) {
    ordered_json body;
    try {
      body = ordered_json::parse(error_body);
    } catch (const nlohmann::json::parse_error&) {
      body = {{"message", error_body}};
    }
    throw ApiError(status, body.value("error", "HttpError"), body.value("message", error_body), body);
  }
  if (!res) throw ServerUnavailable("event stream for " + subscriber + ": " + httplib::to_string(res.error()));
  throw ServerUnavailable("event stream for " + subscriber + " closed by server");
}

}  // namespace flame::control
