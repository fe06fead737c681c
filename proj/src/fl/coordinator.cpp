// SPDX-License-Identifier: Apache-2.0
#include "flame/fl/coordinator.hpp"

#include <algorithm>

namespace flame::fl {

CoordinatorState::CoordinatorState(const std::vector<std::string>& names) {
  for (const auto& n : names) aggregators[n];
}

std::set<std::string> CoordinatorState::enabled() const {
  std::set<std::string> out;
  for (const auto& [name, b] : aggregators)
    if (b.remaining == 0) out.insert(name);
  return out;
}

bool is_straggler(const std::string& aggregator, const std::map<std::string, double>& delays, double threshold,
                  double floor_ms) {
  auto self = delays.find(aggregator);
  if (self == delays.end()) return false;
  std::vector<double> others;
  for (const auto& [name, d] : delays)
    if (name != aggregator) others.push_back(std::max(d, floor_ms));
  if (others.empty()) return false;
  std::sort(others.begin(), others.end());
  const auto m = others.size();
  const double median = m % 2 ? others[m / 2] : (others[m / 2 - 1] + others[m / 2]) / 2.0;
  return std::max(self->second, floor_ms) > threshold * median;
}

std::set<std::string> coordinator_step(CoordinatorState& state, const std::map<std::string, double>& delays) {
  for (const auto& [name, d] : delays) state.history[name].push_back(d);
  const bool comparable = delays.size() >= 2;

  std::vector<std::string> to_exclude;
  for (auto& [name, b] : state.aggregators) {
    if (!delays.contains(name)) {
      if (b.remaining > 0 && --b.remaining == 0) b.probing = true;
      continue;
    }
    if (!comparable) continue;
    const bool delayed = is_straggler(name, delays, state.threshold, state.floor_ms);
    if (b.probing) {
      b.probing = false;
      if (delayed) {
        to_exclude.push_back(name);
      } else {
        b.consecutive = 0;
        b.exclusions = 0;
      }
      continue;
    }
    b.consecutive = delayed ? b.consecutive + 1 : 0;
    if (b.consecutive >= state.detect_after) to_exclude.push_back(name);
  }

  for (const auto& name : to_exclude) {
    auto& b = state.aggregators.at(name);
    const auto still_enabled = state.enabled();
    if (still_enabled.size() <= 1 && still_enabled.contains(name)) continue;
    b.remaining = std::min(1 << std::min(b.exclusions, 30), state.cap);
    ++b.exclusions;
    b.consecutive = 0;
  }
  return state.enabled();
}

}  // namespace flame::fl
