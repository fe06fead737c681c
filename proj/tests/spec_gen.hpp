// SPDX-License-Identifier: Apache-2.0
// Random TAG generator for property tests. Every generated spec satisfies
// the job-spec invariants.
#pragma once

#include <random>
#include <string>
#include <vector>

#include "flame/common/resources.hpp"
#include "flame/tag/job_spec.hpp"

namespace flame::testgen {

struct GeneratedJob {
  tag::JobSpec spec;
  std::vector<DatasetRecord> datasets;
  std::vector<ComputeRecord> computes;
};

inline GeneratedJob generate_job(std::mt19937_64& rng) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  GeneratedJob out;
  auto& spec = out.spec;
  spec.job_name = "gen";

  const int groups = pick(1, 3);
  std::vector<std::string> labels;
  for (int g = 0; g < groups; ++g) labels.push_back("g" + std::to_string(g));
  const bool peer_channel = pick(0, 3) == 0;
  const int levels = pick(1, 3);

  tag::RoleSpec trainer{"trainer", 1, true, {}, "trainer"};
  for (const auto& g : labels) {
    tag::GroupAssociation ga{{"ch0", g}};
    if (peer_channel) ga["peer"] = g;
    trainer.group_association.push_back(ga);
  }
  spec.roles.push_back(trainer);

  tag::ChannelSpec ch0;
  ch0.name = "ch0";
  ch0.pair = {"trainer", "agg0"};
  ch0.group_by = labels;
  spec.channels.push_back(ch0);
  if (peer_channel) {
    tag::ChannelSpec peer;
    peer.name = "peer";
    peer.pair = {"trainer", "trainer"};
    peer.group_by = labels;
    peer.backend.kind = tag::BackendKind::PointToPoint;
    spec.channels.push_back(peer);
  }

  for (int l = 0; l < levels; ++l) {
    tag::RoleSpec agg;
    agg.name = "agg" + std::to_string(l);
    agg.program = l + 1 == levels ? "global-aggregator" : "aggregator";
    agg.replica = pick(1, 3);
    const bool has_up = l + 1 < levels;
    const std::string down = "ch" + std::to_string(l);
    const std::string up = "ch" + std::to_string(l + 1);
    if (l == 0) {
      for (const auto& g : labels) {
        tag::GroupAssociation ga{{down, g}};
        if (has_up) ga[up] = "default";
        agg.group_association.push_back(ga);
      }
    } else {
      const int entries = pick(1, 2);
      for (int e = 0; e < entries; ++e) {
        tag::GroupAssociation ga{{down, "default"}};
        if (has_up) ga[up] = "default";
        agg.group_association.push_back(ga);
      }
    }
    spec.roles.push_back(agg);
    if (has_up) {
      tag::ChannelSpec ch;
      ch.name = up;
      ch.pair = {agg.name, "agg" + std::to_string(l + 1)};
      spec.channels.push_back(ch);
    }
  }

  int next = 0;
  for (const auto& g : labels) {
    tag::DatasetGroup group{g, {}};
    // Every group gets at least one dataset so each aggregator has trainers.
    const int n = pick(1, 4);
    for (int i = 0; i < n; ++i) {
      auto id = "d" + std::to_string(next++);
      group.dataset_ids.push_back(id);
      out.datasets.push_back({id, pick(0, 1) ? "us/west" : "us/east", "synthetic:?seed=" + id, "owner"});
    }
    spec.dataset_groups.push_back(group);
  }
  spec.hyperparams["rounds"] = pick(1, 5);
  out.computes = {{"c-any", "*", "", 8}, {"c-us", "us", "", 8}, {"c-west", "us/west", "", 8}};
  return out;
}

}  // namespace flame::testgen
