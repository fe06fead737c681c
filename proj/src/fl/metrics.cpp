// SPDX-License-Identifier: Apache-2.0
#include "flame/fl/metrics.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include <fstream>
#include <sstream>

#include "flame/common/error.hpp"

namespace flame::fl {

FLAME_DEFINE_ERROR(MetricsIoError);

namespace fs = std::filesystem;

std::string to_csv_row(const RoundMetrics& m) {
  std::ostringstream out;
  out.precision(17);
  out << m.round << ',' << m.worker_id << ',' << m.role << ',' << m.duration_ms << ',' << m.upload_ms << ','
      << m.loss << ',' << m.accuracy << ',' << m.bytes_sent;
  return out.str();
}

MetricsSink::MetricsSink(fs::path dir) : dir_(std::move(dir)) {
  if (!dir_.empty()) fs::create_directories(dir_ / "checkpoints");
}

void MetricsSink::append(const fs::path& file, const std::string& line, const char* header) {
  int fd = ::open(file.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw MetricsIoError("cannot open " + file.string());
  ::flock(fd, LOCK_EX);
  std::string text;
  struct stat st {};
  if (header != nullptr && ::fstat(fd, &st) == 0 && st.st_size == 0) text = std::string(header) + "\n";
  text += line + "\n";
  const char* p = text.data();
  std::size_t left = text.size();
  while (left > 0) {
    auto n = ::write(fd, p, left);
    if (n <= 0) break;
    p += n;
    left -= static_cast<std::size_t>(n);
  }
  ::flock(fd, LOCK_UN);
  ::close(fd);
}

void MetricsSink::row(const RoundMetrics& m) {
  if (enabled()) append(dir_ / "metrics.csv", to_csv_row(m), kMetricsHeader);
}

void MetricsSink::event(const nlohmann::ordered_json& e) {
  if (enabled()) append(dir_ / "events.jsonl", e.dump(), nullptr);
}

void MetricsSink::checkpoint(int round, const ModelWeights& w) {
  if (!enabled()) return;
  const auto name = round < 0 ? std::string("final.bin") : "round-" + std::to_string(round) + ".bin";
  const auto bytes = serialize(w);
  const auto tmp = dir_ / "checkpoints" / (name + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw MetricsIoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, dir_ / "checkpoints" / name);
}

std::vector<RoundMetrics> read_metrics_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw MetricsIoError("cannot read " + file.string());
  std::vector<RoundMetrics> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> cols;
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    if (cols.size() != 8) throw MetricsIoError("bad metrics row '" + line + "'");
    RoundMetrics m;
    m.round = std::stoi(cols[0]);
    m.worker_id = cols[1];
    m.role = cols[2];
    m.duration_ms = std::stod(cols[3]);
    m.upload_ms = std::stod(cols[4]);
    m.loss = std::stod(cols[5]);
    m.accuracy = std::stod(cols[6]);
    m.bytes_sent = std::stoull(cols[7]);
    out.push_back(m);
  }
  return out;
}

}  // namespace flame::fl
