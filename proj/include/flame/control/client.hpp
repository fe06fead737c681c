// SPDX-License-Identifier: Apache-2.0
// Blocking client for the control-plane API. Safe to share across threads.
#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "flame/common/resources.hpp"
#include "flame/control/records.hpp"
#include "flame/fl/manifest.hpp"

namespace flame::control {

FLAME_DEFINE_ERROR(ServerUnavailable);

// A non-2xx answer. code() is the server's error code, body() the full body.
class ApiError : public Error {
 public:
  ApiError(int status, const std::string& code, const std::string& message, ordered_json body)
      : Error(code, message), status_(status), body_(std::move(body)) {}
  int status() const { return status_; }
  const ordered_json& body() const { return body_; }

 private:
  int status_;
  ordered_json body_;
};

class ApiClient {
 public:
  ApiClient(std::string host, std::uint16_t port, std::chrono::milliseconds timeout = std::chrono::seconds(10));
  // Accepts "host:port" or "http://host:port".
  static ApiClient from_url(const std::string& url);
  std::string url() const;

  ordered_json get(const std::string& path) const;
  ordered_json post(const std::string& path, const ordered_json& body) const;
  ordered_json put(const std::string& path, const ordered_json& body = ordered_json::object()) const;

  std::string register_compute(const ComputeRecord& record) const;
  std::string register_dataset(const DatasetRecord& record) const;
  std::string create_job(const ordered_json& document) const;
  ordered_json start_job(const std::string& job_id, const std::vector<std::string>& unmanaged = {}) const;
  ordered_json stop_job(const std::string& job_id) const;
  ordered_json job_status(const std::string& job_id) const;
  void report_status(const std::string& job_id, const std::string& worker_id, TaskStatus status,
                     const std::string& detail = {}) const;
  fl::TaskManifest manifest(const std::string& job_id, const std::string& worker_id) const;
  fl::TaskManifest claim_slot(const std::string& job_id, const std::string& worker_id) const;
  void ack(const std::string& subscriber, std::uint64_t event_id) const;

  // Streams the subscriber's events until `on_event` returns false or
  // `keep_going` turns false (checked at least once per keepalive). Throws
  // ServerUnavailable when the stream cannot be opened or drops, ApiError
  // when the server refuses it.
  void subscribe(const std::string& subscriber, const std::function<bool(const Event&)>& on_event,
                 const std::function<bool()>& keep_going) const;

 private:
  std::string host_;
  std::uint16_t port_;
  std::chrono::milliseconds timeout_;
};

}  // namespace flame::control
