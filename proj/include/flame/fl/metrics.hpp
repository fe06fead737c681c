// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flame/fl/model.hpp"

namespace flame::fl {

struct RoundMetrics {
  int round = 0;
  std::string worker_id;
  std::string role;
  double duration_ms = 0;
  double upload_ms = 0;
  double loss = 0;
  double accuracy = 0;
  std::uint64_t bytes_sent = 0;
};

inline constexpr const char* kMetricsHeader = "round,worker_id,role,duration_ms,upload_ms,loss,accuracy,bytes_sent";

std::string to_csv_row(const RoundMetrics& m);

// Per-job artifact writer. Several worker processes may share one
// directory; rows are appended under an exclusive file lock.
class MetricsSink {
 public:
  MetricsSink() = default;  // discards everything
  explicit MetricsSink(std::filesystem::path dir);

  bool enabled() const { return !dir_.empty(); }
  const std::filesystem::path& dir() const { return dir_; }
  void row(const RoundMetrics& m);
  void event(const nlohmann::ordered_json& e);
  // checkpoints/round-<r>.bin, or checkpoints/final.bin for round < 0
  void checkpoint(int round, const ModelWeights& w);

 private:
  void append(const std::filesystem::path& file, const std::string& line, const char* header);

  std::filesystem::path dir_;
};

std::vector<RoundMetrics> read_metrics_csv(const std::filesystem::path& file);

}  // namespace flame::fl
