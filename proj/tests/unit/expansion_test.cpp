// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include <gtest/gtest.h>

#include "flame/expansion/expand.hpp"
#include "flame/expansion/realm.hpp"
#include "flame/tag/job_spec.hpp"
#include "spec_gen.hpp"

using namespace flame;
using namespace flame::expansion;

namespace {

tag::JobSpec two_region_spec() {
  std::ifstream in(std::string(FLAME_SOURCE_DIR) + "/samples/hfl_two_region.json");
  std::stringstream ss;
  ss << in.rdbuf();
  return tag::parse_job_spec(ss.str());
}

std::vector<DatasetRecord> two_region_datasets() {
  return {{"A", "us/west", "synthetic:?seed=1", "alice"},
          {"B", "us/west", "synthetic:?seed=2", "bob"},
          {"C", "us/east", "synthetic:?seed=3", "carol"},
          {"D", "us/east", "synthetic:?seed=4", "dave"}};
}

std::vector<ComputeRecord> two_region_computes() {
  return {{"c-west", "us/west", "", 4}, {"c-east", "us/east", "", 4}, {"c-us", "us", "", 4}};
}

using EdgeKey = std::tuple<std::string, std::string, std::string, std::string>;

EdgeKey key(const Edge& e) {
  auto [a, b] = std::minmax(e.a, e.b);
  return {a, b, e.channel, e.group};
}

std::set<EdgeKey> edge_set(const std::vector<Edge>& edges) {
  std::set<EdgeKey> out;
  for (const auto& e : edges) out.insert(key(e));
  return out;
}

// Brute force over all worker pairs.
std::set<EdgeKey> oracle_edges(const PhysicalTopology& topo, const tag::JobSpec& spec) {
  std::set<EdgeKey> out;
  for (std::size_t i = 0; i < topo.workers.size(); ++i)
    for (std::size_t j = i + 1; j < topo.workers.size(); ++j) {
      const auto& a = topo.workers[i];
      const auto& b = topo.workers[j];
      for (const auto& ch : spec.channels) {
        if (!a.channel_bindings.contains(ch.name) || !b.channel_bindings.contains(ch.name)) continue;
        if (a.channel_bindings.at(ch.name) != b.channel_bindings.at(ch.name)) continue;
        bool opposite = (a.role == ch.pair.first && b.role == ch.pair.second) ||
                        (a.role == ch.pair.second && b.role == ch.pair.first);
        if (!opposite) continue;
        auto [x, y] = std::minmax(a.worker_id, b.worker_id);
        out.insert({x, y, ch.name, a.channel_bindings.at(ch.name)});
      }
    }
  return out;
}

// Walks the job spec by hand: one worker per dataset for the consumer, one per
// (entry, replica) otherwise.
std::map<std::string, std::size_t> oracle_counts(const tag::JobSpec& spec) {
  std::map<std::string, std::size_t> out;
  for (const auto& role : spec.roles) {
    std::size_t n = 0;
    if (role.is_data_consumer) {
      for (const auto& g : spec.dataset_groups)
        for (std::size_t d = 0; d < g.dataset_ids.size(); ++d) ++n;
    } else {
      for (std::size_t e = 0; e < role.group_association.size(); ++e)
        for (int k = 0; k < role.replica; ++k) ++n;
    }
    out[role.name] = n;
  }
  return out;
}

}  // namespace

TEST(Realm, Admission) {
  EXPECT_TRUE(realm_admits("*", "eu/fr"));
  EXPECT_TRUE(realm_admits("us", "us/west"));
  EXPECT_TRUE(realm_admits("us/west", "us/west"));
  EXPECT_FALSE(realm_admits("us/west", "us"));
  EXPECT_FALSE(realm_admits("us/we", "us/west"));
  EXPECT_EQ(common_realm("us/west/a", "us/west/b"), "us/west");
  EXPECT_EQ(common_realm("us/west", "eu"), "*");
}

TEST(Expand, TwoRegionWalkthrough) {
  auto topo = expand(two_region_spec(), two_region_datasets(), two_region_computes(), "job1");
  ASSERT_EQ(topo.workers.size(), 7u);

  std::map<std::string, std::string> dataset_of;
  std::map<std::string, std::string> group_of;
  std::map<std::string, int> per_role;
  for (const auto& w : topo.workers) {
    ++per_role[w.role];
    if (w.dataset_ref) dataset_of[w.worker_id] = *w.dataset_ref;
    if (w.channel_bindings.contains("param-channel")) group_of[w.worker_id] = w.channel_bindings.at("param-channel");
  }
  EXPECT_EQ(per_role["trainer"], 4);
  EXPECT_EQ(per_role["aggregator"], 2);
  EXPECT_EQ(per_role["global-aggregator"], 1);
  EXPECT_EQ(dataset_of, (std::map<std::string, std::string>{
                            {"trainer-0", "A"}, {"trainer-1", "B"}, {"trainer-2", "C"}, {"trainer-3", "D"}}));
  EXPECT_EQ(group_of["trainer-0"], "west");
  EXPECT_EQ(group_of["trainer-1"], "west");
  EXPECT_EQ(group_of["trainer-2"], "east");
  EXPECT_EQ(group_of["trainer-3"], "east");
  EXPECT_EQ(group_of["aggregator-0"], "west");
  EXPECT_EQ(group_of["aggregator-1"], "east");

  std::set<EdgeKey> expected{
      {"aggregator-0", "trainer-0", "param-channel", "west"},
      {"aggregator-0", "trainer-1", "param-channel", "west"},
      {"aggregator-1", "trainer-2", "param-channel", "east"},
      {"aggregator-1", "trainer-3", "param-channel", "east"},
      {"aggregator-0", "global-aggregator-0", "agg-channel", "default"},
      {"aggregator-1", "global-aggregator-0", "agg-channel", "default"},
  };
  EXPECT_EQ(edge_set(topo.edges()), expected);

  // Trainers sit next to their data; the west and east aggregators follow
  // their trainers; the global aggregator bridges both regions.
  EXPECT_EQ(topo.find("trainer-0")->compute_id, "c-west");
  EXPECT_EQ(topo.find("trainer-2")->compute_id, "c-east");
  EXPECT_EQ(topo.find("aggregator-0")->compute_id, "c-west");
  EXPECT_EQ(topo.find("aggregator-1")->compute_id, "c-east");
  EXPECT_EQ(topo.find("global-aggregator-0")->compute_id, "c-us");
}

TEST(Expand, MinimalClassical) {
  auto spec = tag::parse_job_spec(R"({"name":"cfl",
    "roles":[{"name":"trainer","isDataConsumer":true},
             {"name":"aggregator","groupAssociation":[{"param-channel":"default"}]}],
    "channels":[{"name":"param-channel","pair":["trainer","aggregator"]}],
    "datasetGroups":{"default":["d0"]}})");
  std::vector<DatasetRecord> ds{{"d0", "us", "synthetic:", "o"}};
  std::vector<ComputeRecord> cs{{"c0", "*", "", 1}};
  auto topo = expand(spec, ds, cs);
  EXPECT_EQ(topo.workers.size(), 2u);
  EXPECT_EQ(topo.edges().size(), 1u);
}

TEST(BuildWorkers, DataConsumerTakesDatasetGroup) {
  auto spec = two_region_spec();
  auto ds = two_region_datasets();
  auto cs = two_region_computes();
  DatasetIndex index(ds);
  ComputePlacer placer(cs);
  auto workers = build_workers_data_consumer(*spec.find_role("trainer"), spec, index, placer);
  ASSERT_EQ(workers.size(), 4u);
  EXPECT_EQ(workers[0].worker_id, "trainer-0");
  EXPECT_EQ(workers[0].channel_bindings, (std::map<std::string, std::string>{{"param-channel", "west"}}));
  EXPECT_EQ(workers[0].dataset_ref, "A");
}

TEST(BuildWorkers, SameGroupDatasetsShareBindings) {
  auto spec = two_region_spec();
  spec.dataset_groups = {{"west", {"A", "B", "C"}}};
  auto ds = two_region_datasets();
  auto cs = two_region_computes();
  DatasetIndex index(ds);
  ComputePlacer placer(cs);
  auto workers = build_workers_data_consumer(*spec.find_role("trainer"), spec, index, placer);
  ASSERT_EQ(workers.size(), 3u);
  std::set<std::string> ids;
  for (const auto& w : workers) {
    ids.insert(w.worker_id);
    EXPECT_EQ(w.channel_bindings, workers[0].channel_bindings);
  }
  EXPECT_EQ(ids.size(), 3u);
}

TEST(BuildWorkers, GeneralRoleEntriesTimesReplica) {
  auto spec = two_region_spec();
  EXPECT_EQ(build_workers_general(*spec.find_role("aggregator")).size(), 2u);

  tag::RoleSpec coord_agg{"aggregator", 3, false,
                          {{{"param-channel", "default"}, {"agg-channel", "default"}, {"agg-coord-ch", "default"}}},
                          "coord-aggregator"};
  auto workers = build_workers_general(coord_agg);
  ASSERT_EQ(workers.size(), 3u);
  EXPECT_EQ(workers[2].worker_id, "aggregator-2");
  for (const auto& w : workers) EXPECT_EQ(w.channel_bindings, coord_agg.group_association[0]);
}

TEST(DecideCompute, ExactRealmMatch) {
  std::vector<ComputeRecord> cs{{"c1", "us/west", "", 1}, {"c2", "us/east", "", 1}};
  ComputePlacer placer(cs);
  EXPECT_EQ(placer.decide("us/west", "A"), "c1");
}

TEST(DecideCompute, BridgingAggregatorGoesToCommonAncestor) {
  auto spec = tag::parse_job_spec(R"({"name":"bridge",
    "roles":[{"name":"trainer","isDataConsumer":true},
             {"name":"aggregator","groupAssociation":[{"param-channel":"default"}]}],
    "channels":[{"name":"param-channel","pair":["trainer","aggregator"]}],
    "datasetGroups":{"default":["w","e"]}})");
  std::vector<DatasetRecord> ds{{"w", "us/west", "", ""}, {"e", "us/east", "", ""}};
  std::vector<ComputeRecord> cs{{"c1", "us/west", "", 1}, {"c2", "us/east", "", 1}, {"c3", "us", "", 1}};
  auto topo = expand(spec, ds, cs);
  EXPECT_EQ(topo.find("aggregator-0")->compute_id, "c3");
}

TEST(DecideCompute, NoAdmittingCompute) {
  auto spec = two_region_spec();
  auto ds = two_region_datasets();
  ds[0].realm = "eu";
  std::vector<ComputeRecord> cs{{"c-us", "us", "", 4}};
  EXPECT_THROW(expand(spec, ds, cs), NoComputeForRealm);
}

TEST(DecideCompute, TiesRoundRobinInIdOrder) {
  std::vector<ComputeRecord> cs{{"b", "us/west", "", 1}, {"a", "us/west", "", 1}, {"z", "us", "", 1}};
  ComputePlacer placer(cs);
  EXPECT_EQ(placer.decide("us/west", "d1"), "a");
  EXPECT_EQ(placer.decide("us/west", "d2"), "b");
  EXPECT_EQ(placer.decide("us/west", "d3"), "a");
  EXPECT_EQ(placer.decide(std::nullopt, "w"), "b");
  ASSERT_FALSE(placer.notes().empty());
}

TEST(Expand, UnregisteredDataset) {
  auto ds = two_region_datasets();
  ds.pop_back();
  EXPECT_THROW(expand(two_region_spec(), ds, two_region_computes()), UnregisteredDataset);
}

TEST(Expand, InvalidSpecRejectedBeforeExpansion) {
  auto spec = two_region_spec();
  spec.roles[1].replica = 0;
  EXPECT_THROW(expand(spec, two_region_datasets(), two_region_computes()), PreCheckFailed);
}

TEST(PostCheck, FlagsEmptyChannelSide) {
  auto spec = two_region_spec();
  auto topo = expand(spec, two_region_datasets(), two_region_computes());
  std::erase_if(topo.workers, [](const WorkerConfig& w) { return w.worker_id == "aggregator-1"; });
  auto report = post_check(topo, spec);
  EXPECT_TRUE(report.has(tag::codes::kEmptyChannelSide)) << report.summary();
  EXPECT_TRUE(report.has(tag::codes::kWorkerCountMismatch)) << report.summary();
}

TEST(PostCheck, FlagsBindingMismatch) {
  auto spec = two_region_spec();
  auto topo = expand(spec, two_region_datasets(), two_region_computes());
  const_cast<WorkerConfig*>(topo.find("trainer-0"))->channel_bindings["agg-channel"] = "default";
  EXPECT_TRUE(post_check(topo, spec).has(tag::codes::kBindingMismatch));
}

TEST(TopologyJson, RoundTrip) {
  auto topo = expand(two_region_spec(), two_region_datasets(), two_region_computes(), "j");
  EXPECT_EQ(topology_from_json(topology_to_json(topo)), topo);
  auto with_edges = topology_to_json(topo, true);
  EXPECT_EQ(with_edges["edges"].size(), 6u);
}

TEST(TopologyDot, ListsWorkersAndEdges) {
  auto dot = topology_to_dot(expand(two_region_spec(), two_region_datasets(), two_region_computes()));
  EXPECT_NE(dot.find("\"trainer-3\""), std::string::npos);
  EXPECT_NE(dot.find("\"aggregator-1\" -- \"global-aggregator-0\""), std::string::npos) << dot;
}

TEST(ExpansionProperty, CountLawEdgeLawAndPostCheck) {
  std::mt19937_64 rng(42);
  for (int i = 0; i < 300; ++i) {
    auto job = testgen::generate_job(rng);
    auto topo = expand(job.spec, job.datasets, job.computes);
    EXPECT_TRUE(post_check(topo, job.spec).ok());

    std::map<std::string, std::size_t> counts;
    for (const auto& w : topo.workers) ++counts[w.role];
    EXPECT_EQ(counts, oracle_counts(job.spec));

    EXPECT_EQ(edge_set(topo.edges()), oracle_edges(topo, job.spec));
    EXPECT_EQ(topo.edges().size(), oracle_edges(topo, job.spec).size());

    std::set<std::string> ids;
    for (const auto& w : topo.workers) EXPECT_TRUE(ids.insert(w.worker_id).second);
  }
}

TEST(ExpansionProperty, Deterministic) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    auto job = testgen::generate_job(rng);
    auto a = topology_to_json(expand(job.spec, job.datasets, job.computes)).dump();
    auto b = topology_to_json(expand(job.spec, job.datasets, job.computes)).dump();
    EXPECT_EQ(a, b);
  }
}

TEST(ExpansionProperty, RoleOrderDoesNotMatter) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 100; ++i) {
    auto job = testgen::generate_job(rng);
    auto reference = expand(job.spec, job.datasets, job.computes);
    auto shuffled = job.spec;
    std::shuffle(shuffled.roles.begin(), shuffled.roles.end(), rng);
    auto cs = job.computes;
    std::shuffle(cs.begin(), cs.end(), rng);
    EXPECT_EQ(expand(shuffled, job.datasets, cs), reference);
  }
}
