// SPDX-License-Identifier: Apache-2.0
// Binary-backoff load balancing over aggregators. An aggregator whose
// upload delay exceeds `threshold` times the median of the others for
// `detect_after` consecutive rounds is excluded for 1 round; each time a
// probe round shows the delay again, the exclusion doubles up to `cap`.
#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

namespace flame::fl {

struct Backoff {
  int consecutive = 0;  // delayed rounds in a row while enabled
  int exclusions = 0;   // exclusions since the last clean round
  int remaining = 0;    // excluded rounds left
  bool probing = false;
};

struct CoordinatorState {
  explicit CoordinatorState(const std::vector<std::string>& aggregators);

  std::map<std::string, Backoff> aggregators;
  std::map<std::string, std::vector<double>> history;
  double threshold = 2.0;
  int detect_after = 3;
  int cap = 16;
  double floor_ms = 0.0;  // delays below this are compared as floor_ms

  std::set<std::string> enabled() const;
};

bool is_straggler(const std::string& aggregator, const std::map<std::string, double>& delays, double threshold,
                  double floor_ms = 0.0);

// Feeds one round of upload delays (ms) from the aggregators that took part
// and returns the set enabled for the next round. Never returns an empty set.
std::set<std::string> coordinator_step(CoordinatorState& state, const std::map<std::string, double>& delays);

}  // namespace flame::fl
