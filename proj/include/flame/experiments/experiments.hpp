// SPDX-License-Identifier: Apache-2.0
// Experiment harnesses behind `flame experiment run` and the acceptance
// checks. Each writes CSV/JSON artifacts when given a directory.
#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace flame::experiments {

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

bool all_passed(const std::vector<Check>& checks);

// ---- hybrid vs classical ----

struct HybridConfig {
  int trainers = 10;
  int groups = 2;
  std::string straggler = "trainer-3";
  double straggler_bps = 1e6;
  double p2p_bps = 1e8;
  std::size_t n = 200;    // samples per trainer
  std::size_t d = 1000;   // model size
  int rounds = 20;
  double lr = 0.1;
  double target_fraction = 0.1;  // target loss = fraction of the initial loss
  std::uint64_t seed = 0;
};

struct TopologyRun {
  std::vector<double> round_ms;
  std::vector<double> loss;  // global model after each round, over all data
  std::vector<std::uint64_t> inbound_bytes;
  double initial_loss = 0;
  int rounds_to_target = -1;  // 1-based, -1 if never reached
  double time_to_target_ms = -1;
  double mean_inbound_bytes = 0;
  std::vector<double> final_weights;
};

struct HybridResult {
  HybridConfig config;
  double target_loss = 0;
  TopologyRun classical;
  TopologyRun hybrid;
  double speedup = 0;      // classical / hybrid time to target
  double byte_factor = 0;  // classical / hybrid aggregator-bound bytes per round
  double expected_byte_factor = 0;

  nlohmann::ordered_json summary() const;
  std::vector<Check> checks() const;
};

HybridResult run_hybrid_vs_classical(const HybridConfig& cfg, const std::filesystem::path& artifacts = {});

// ---- coordinated backoff ----

struct BackoffConfig {
  int trainers = 10;
  int aggregators = 2;
  std::string straggler = "aggregator-1";
  double delay_ms = 150;
  int delay_from = 6;
  int rounds = 60;
  std::uint64_t seed = 0;
};

struct BackoffResult {
  BackoffConfig config;
  std::vector<std::set<std::string>> enabled;  // per round
  std::vector<int> excluded_rounds;            // rounds without the straggler
  std::vector<double> round_ms;                // global aggregator round time
  double mean_ms_excluded = 0;
  double mean_ms_straggling = 0;  // rounds with the delayed straggler enabled

  nlohmann::ordered_json summary() const;
  std::vector<Check> checks() const;
};

BackoffResult run_coordinated_backoff(const BackoffConfig& cfg, const std::filesystem::path& artifacts = {});
// Rounds the straggler sits out, replayed from the backoff rules alone.
std::vector<int> expected_exclusions(int delay_from, int rounds, int detect_after = 3, int cap = 16);

// ---- expansion overhead ----

struct ExpansionPoint {
  std::string topology;
  std::size_t workers = 0;
  double seconds = 0;
};

struct ExpansionConfig {
  std::vector<std::size_t> sizes{100, 1000, 10000, 100000};
  int repeats = 3;  // best of
  int coordinated_replicas = 100;
};

struct ExpansionResult {
  std::vector<ExpansionPoint> points;
  double linearity = 0;           // max/min seconds per worker over C-FL sizes
  double coordinated_ratio = 0;   // CO-FL / C-FL at the largest size

  nlohmann::ordered_json summary() const;
  std::vector<Check> checks() const;
};

ExpansionResult run_expansion_overhead(const ExpansionConfig& cfg, const std::filesystem::path& artifacts = {});

// ./artifacts/<experiment>/<UTC timestamp>/
std::filesystem::path artifact_dir(const std::filesystem::path& root, const std::string& experiment);
void write_json(const std::filesystem::path& file, const nlohmann::ordered_json& doc);

}  // namespace flame::experiments
