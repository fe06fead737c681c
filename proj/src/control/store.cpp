// SPDX-License-Identifier: Apache-2.0
#include "flame/control/store.hpp"

#include <fstream>
#include <string>

namespace flame::control {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

Store::Store(fs::path dir, std::size_t snapshot_every)
    : dir_(std::move(dir)), snapshot_every_(snapshot_every == 0 ? 1 : snapshot_every) {}

Store::~Store() {
  if (journal_ != nullptr) std::fclose(journal_);
}

void Store::open_journal(bool truncate) {
  if (journal_ != nullptr) std::fclose(journal_);
  const auto path = dir_ / "journal.jsonl";
  journal_ = std::fopen(path.c_str(), truncate ? "w" : "a");
  if (journal_ == nullptr) throw StoreError("cannot open " + path.string());
}

Store::Loaded Store::load() {
  Loaded out;
  if (!persistent()) return out;
  fs::create_directories(dir_);
  std::uint64_t base = 0;
  if (std::ifstream in(dir_ / "snapshot.json"); in) {
    try {
      auto doc = ordered_json::parse(in);
      base = doc.at("seq").get<std::uint64_t>();
      out.snapshot = doc.at("state");
    } catch (const nlohmann::json::exception& e) {
      throw StoreError(std::string("corrupt snapshot: ") + e.what());
    }
  }
  seq_ = base;
  if (std::ifstream in(dir_ / "journal.jsonl"); in) {
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      ordered_json doc;
      try {
        doc = ordered_json::parse(line);
      } catch (const nlohmann::json::exception&) {
        break;  // torn tail
      }
      const auto seq = doc.at("seq").get<std::uint64_t>();
      if (seq <= base) continue;
      seq_ = seq;
      out.entries.push_back(std::move(doc.at("entry")));
      ++since_snapshot_;
    }
  }
  open_journal(false);
  return out;
}

void Store::append(const ordered_json& entry) {
  if (!persistent()) return;
  if (journal_ == nullptr) open_journal(false);
  const auto line = ordered_json{{"seq", ++seq_}, {"entry", entry}}.dump() + "\n";
  if (std::fwrite(line.data(), 1, line.size(), journal_) != line.size() || std::fflush(journal_) != 0)
    throw StoreError("journal write failed");
  ++since_snapshot_;
}

void Store::snapshot(const ordered_json& state) {
  if (!persistent()) return;
  const auto tmp = dir_ / "snapshot.json.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << ordered_json{{"seq", seq_}, {"state", state}}.dump();
    if (!out) throw StoreError("snapshot write failed");
  }
  fs::rename(tmp, dir_ / "snapshot.json");
  open_journal(true);
  since_snapshot_ = 0;
}

}  // namespace flame::control
