// SPDX-License-Identifier: Apache-2.0
// Append-only journal with periodic snapshots.
#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "flame/common/error.hpp"

namespace flame::control {

FLAME_DEFINE_ERROR(StoreError);

// Layout: <dir>/snapshot.json holds {"seq": n, "state": ...}; <dir>/journal.jsonl
// holds {"seq": n, "entry": ...} lines. Entries with seq <= the snapshot's
// are skipped on load, so a crash between snapshot and truncation is safe.
// A torn trailing line is ignored. With an empty dir nothing is persisted.
class Store {
 public:
  struct Loaded {
    nlohmann::ordered_json snapshot;  // null when none
    std::vector<nlohmann::ordered_json> entries;
  };

  explicit Store(std::filesystem::path dir = {}, std::size_t snapshot_every = 256);
  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  bool persistent() const { return !dir_.empty(); }
  Loaded load();
  void append(const nlohmann::ordered_json& entry);
  // True once `snapshot_every` entries have accumulated since the last snapshot.
  bool snapshot_due() const { return persistent() && since_snapshot_ >= snapshot_every_; }
  void snapshot(const nlohmann::ordered_json& state);

 private:
  void open_journal(bool truncate);

  std::filesystem::path dir_;
  std::size_t snapshot_every_;
  std::uint64_t seq_ = 0;
  std::size_t since_snapshot_ = 0;
  std::FILE* journal_ = nullptr;
};

}  // namespace flame::control
