// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <cstring>
#include <set>

#include "flame/fl/coordinator.hpp"
#include "flame/fl/dataset.hpp"
#include "flame/fl/model.hpp"
#include "flame/fl/train.hpp"

using namespace flame::fl;

namespace {

ModelUpdate update(std::vector<double> w, std::uint64_t n, std::string sender = "") {
  ModelUpdate u;
  u.weights.dims = {w.size()};
  u.weights.values = std::move(w);
  u.sample_count = n;
  u.sender = std::move(sender);
  return u;
}

double rel_error(const std::vector<double>& got, const std::vector<double>& want) {
  double num = 0;
  double den = 0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    num += (got[i] - want[i]) * (got[i] - want[i]);
    den += want[i] * want[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

std::vector<double> brute_force_mean(const std::vector<ModelUpdate>& ups) {
  std::vector<double> sum(ups[0].weights.size(), 0.0);
  double total = 0;
  for (const auto& u : ups) {
    total += static_cast<double>(u.sample_count);
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += static_cast<double>(u.sample_count) * u.weights.values[j];
  }
  for (auto& v : sum) v /= total;
  return sum;
}

SyntheticDataset hand_dataset(std::vector<std::vector<double>> rows, std::vector<double> labels) {
  SyntheticDataset ds;
  ds.spec.n = rows.size();
  ds.spec.d = rows[0].size();
  for (const auto& r : rows) ds.features.insert(ds.features.end(), r.begin(), r.end());
  ds.labels = std::move(labels);
  return ds;
}

}  // namespace

TEST(FedAvg, HandComputedWeightedMean) {
  std::vector<ModelUpdate> ups{update({1, 2}, 1, "a"), update({3, 4}, 3, "b")};
  auto w = fedavg_aggregate(ups);
  EXPECT_DOUBLE_EQ(w.values[0], 2.5);
  EXPECT_DOUBLE_EQ(w.values[1], 3.5);
}

TEST(FedAvg, SingleUpdateIsIdentity) {
  std::vector<ModelUpdate> ups{update({0.1, -7.25, 3e10}, 17)};
  EXPECT_EQ(fedavg_aggregate(ups).values, ups[0].weights.values);
}

TEST(FedAvg, IdenticalWeightsAreIdempotent) {
  std::vector<ModelUpdate> ups{update({1.5, -2}, 3, "a"), update({1.5, -2}, 9, "b"), update({1.5, -2}, 1, "c")};
  auto w = fedavg_aggregate(ups);
  EXPECT_NEAR(w.values[0], 1.5, 1e-15);
  EXPECT_NEAR(w.values[1], -2, 1e-15);
}

TEST(FedAvg, Errors) {
  EXPECT_THROW(fedavg_aggregate(std::vector<ModelUpdate>{}), EmptyUpdateSet);
  std::vector<ModelUpdate> ups{update({1, 2}, 1), update({1, 2, 3}, 1)};
  EXPECT_THROW(fedavg_aggregate(ups), ShapeMismatch);
}

TEST(FedAvg, OrderIndependent) {
  std::vector<ModelUpdate> ups{update({0.1, 0.7}, 3, "a"), update({0.3, 1e-9}, 5, "b"), update({1e5, 2}, 2, "c")};
  auto first = fedavg_aggregate(ups);
  std::reverse(ups.begin(), ups.end());
  EXPECT_EQ(fedavg_aggregate(ups), first);
}

TEST(FedAvg, MatchesBruteForceOnRandomInstances) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> k_dist(1, 12);
  std::uniform_int_distribution<int> d_dist(1, 40);
  std::uniform_int_distribution<std::uint64_t> n_dist(1, 10000);
  std::normal_distribution<double> val(0.0, 10.0);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = k_dist(rng);
    const int d = d_dist(rng);
    std::vector<ModelUpdate> ups;
    for (int i = 0; i < k; ++i) {
      std::vector<double> w(d);
      for (auto& v : w) v = val(rng);
      ups.push_back(update(w, n_dist(rng), "t" + std::to_string(i)));
    }
    worst = std::max(worst, rel_error(fedavg_aggregate(ups).values, brute_force_mean(ups)));
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(FedAvg, HierarchyCollapsesToFlat) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> val(0.0, 1.0);
  std::uniform_int_distribution<std::uint64_t> n_dist(1, 500);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ModelUpdate> all;
    std::vector<ModelUpdate> group_results;
    for (int g = 0; g < 3; ++g) {
      std::vector<ModelUpdate> group;
      for (int i = 0; i < 1 + trial % 4; ++i) {
        std::vector<double> w(6);
        for (auto& v : w) v = val(rng);
        group.push_back(update(w, n_dist(rng), "g" + std::to_string(g) + "t" + std::to_string(i)));
      }
      all.insert(all.end(), group.begin(), group.end());
      std::uint64_t total = 0;
      for (const auto& u : group) total += u.sample_count;
      ModelUpdate agg;
      agg.weights = fedavg_aggregate(group);
      agg.sample_count = total;
      agg.sender = "agg" + std::to_string(g);
      group_results.push_back(agg);
    }
    EXPECT_LE(rel_error(fedavg_aggregate(group_results).values, fedavg_aggregate(all).values), 1e-9);
  }
}

TEST(Weights, SerializeRoundTripIsBitExact) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::uint64_t> bits;
  ModelWeights w;
  for (int i = 0; i < 257; ++i) {
    double v;
    do {
      auto b = bits(rng);
      std::memcpy(&v, &b, sizeof v);
    } while (!std::isfinite(v));
    w.values.push_back(v);
  }
  w.dims = {257};
  auto back = deserialize(serialize(w));
  ASSERT_EQ(back.values.size(), w.values.size());
  EXPECT_EQ(std::memcmp(back.values.data(), w.values.data(), w.values.size() * sizeof(double)), 0);
  EXPECT_EQ(back.dims, w.dims);
}

TEST(Weights, TruncatedBytesAreRejected) {
  auto bytes = serialize(ModelWeights::zeros(4));
  bytes.pop_back();
  EXPECT_THROW(deserialize(bytes), CorruptWeights);
}

TEST(Dataset, RegenerationIsBitIdentical) {
  auto spec = parse_dataset_url("synthetic:?seed=5&n=50&d=4&noise=0.2&skew=0.5");
  auto a = generate(spec);
  auto b = generate(spec);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.labels, b.labels);
  auto other = spec;
  other.seed = 6;
  EXPECT_NE(generate(other).labels, a.labels);
}

TEST(Dataset, UrlParsing) {
  auto spec = parse_dataset_url("synthetic:?n=10", 16);
  EXPECT_EQ(spec.n, 10u);
  EXPECT_EQ(spec.d, 16u);
  EXPECT_EQ(parse_dataset_url(dataset_url(spec)), spec);
  EXPECT_THROW(parse_dataset_url("s3://bucket/x"), BadDatasetUrl);
  EXPECT_THROW(parse_dataset_url("synthetic:?colour=red"), BadDatasetUrl);
  EXPECT_THROW(parse_dataset_url("synthetic:?n=0"), BadDatasetUrl);
}

TEST(Dataset, NoiselessLabelsFollowTaskWeights) {
  auto ds = generate(parse_dataset_url("synthetic:?seed=1&task=4&n=20&d=3&noise=0&skew=2"));
  auto w = task_weights(4, 3);
  for (std::size_t i = 0; i < ds.n(); ++i) {
    double y = 0;
    for (std::size_t j = 0; j < 3; ++j) y += ds.row(i)[j] * w[j];
    EXPECT_NEAR(ds.labels[i], y, 1e-12);
  }
}

TEST(Train, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> val(0.0, 1.0);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    SyntheticSpec spec;
    spec.seed = trial;
    spec.task = trial % 3;
    spec.n = 5 + trial % 40;
    spec.d = 1 + trial % 12;
    spec.skew = 0.3 * (trial % 4);
    auto ds = generate(spec);
    auto w = ModelWeights::zeros(spec.d);
    for (auto& v : w.values) v = val(rng);
    auto g = gradient(w, ds);
    std::vector<double> fd(spec.d);
    const double h = 1e-5;
    for (std::size_t j = 0; j < spec.d; ++j) {
      auto plus = w;
      auto minus = w;
      plus.values[j] += h;
      minus.values[j] -= h;
      fd[j] = (loss(plus, ds) - loss(minus, ds)) / (2 * h);
    }
    worst = std::max(worst, rel_error(g, fd));
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(Train, OneStepOnTwoPointsMatchesHandComputation) {
  // r = Xw - y = [-3.5, 0.5]; g = X^T r / 2 = [-1.75, -3.25]
  auto ds = hand_dataset({{1, 2}, {0, 1}}, {3, -1});
  ModelWeights w{{0.5, -0.5}, {2}};
  auto u = local_train(w, ds, 1, 0.1);
  EXPECT_NEAR(u.weights.values[0], 0.675, 1e-15);
  EXPECT_NEAR(u.weights.values[1], -0.175, 1e-15);
  EXPECT_EQ(u.sample_count, 2u);
  EXPECT_NEAR(loss(w, ds), (3.5 * 3.5 + 0.25) / 4, 1e-15);
}

TEST(Train, ZeroEpochsOrZeroRateLeaveWeightsUnchanged) {
  auto ds = generate(parse_dataset_url("synthetic:?seed=2&n=30&d=5"));
  ModelWeights w{{1, 2, 3, 4, 5}, {5}};
  EXPECT_EQ(local_train(w, ds, 0, 0.1).weights, w);
  EXPECT_EQ(local_train(w, ds, 5, 0.0).weights, w);
}

TEST(Train, DivergenceIsDetected) {
  auto ds = generate(parse_dataset_url("synthetic:?seed=2&n=30&d=5"));
  EXPECT_THROW(local_train(ModelWeights::zeros(5), ds, 400, 50.0), DivergenceDetected);
  EXPECT_THROW(local_train(ModelWeights::zeros(4), ds, 1, 0.1), ShapeMismatch);
}

TEST(Train, ConvergesAndAccuracyIsBounded) {
  auto ds = generate(parse_dataset_url("synthetic:?seed=9&n=200&d=6&noise=0.05"));
  auto w0 = ModelWeights::zeros(6);
  auto u = local_train(w0, ds, 300, 0.2);
  EXPECT_LT(loss(u.weights, ds), loss(w0, ds) * 0.01);
  EXPECT_GT(accuracy(u.weights, ds), 0.99);
  EXPECT_LE(accuracy(u.weights, ds), 1.0);
  EXPECT_GE(accuracy(w0, ds), 0.0);
}

// Independent replay of the backoff rules, used as oracle.
namespace {

struct OracleAgg {
  int streak = 0;
  int level = 0;
  int left = 0;
  bool probe = false;
};

std::set<std::string> oracle_enabled(const std::map<std::string, OracleAgg>& aggs) {
  std::set<std::string> out;
  for (const auto& [n, a] : aggs)
    if (a.left == 0) out.insert(n);
  return out;
}

std::set<std::string> oracle_step(std::map<std::string, OracleAgg>& aggs, const std::map<std::string, double>& delays) {
  std::vector<std::string> hit;
  for (auto& [n, a] : aggs) {
    auto it = delays.find(n);
    if (it == delays.end()) {
      if (a.left > 0) {
        a.left -= 1;
        a.probe = a.left == 0;
      }
      continue;
    }
    if (delays.size() < 2) continue;
    std::vector<double> rest;
    for (const auto& [m, d] : delays)
      if (m != n) rest.push_back(d);
    std::sort(rest.begin(), rest.end());
    double med = rest.size() % 2 ? rest[rest.size() / 2] : 0.5 * (rest[rest.size() / 2 - 1] + rest[rest.size() / 2]);
    bool slow = it->second > 2 * med;
    if (a.probe) {
      a.probe = false;
      if (slow)
        hit.push_back(n);
      else
        a.streak = a.level = 0;
    } else {
      a.streak = slow ? a.streak + 1 : 0;
      if (a.streak == 3) hit.push_back(n);
    }
  }
  for (const auto& n : hit) {
    auto on = oracle_enabled(aggs);
    if (on.size() == 1 && on.count(n)) continue;
    auto& a = aggs[n];
    int len = 1;
    for (int i = 0; i < a.level && len < 16; ++i) len *= 2;
    a.left = len;
    a.level += 1;
    a.streak = 0;
  }
  return oracle_enabled(aggs);
}

// Runs `rounds` rounds; aggregator `slow` has 1000 ms delay from `from` on,
// others 100 ms. Returns the rounds in which `slow` was excluded.
std::vector<int> excluded_rounds(int rounds, int from) {
  CoordinatorState state({"agg-0", "agg-1"});
  std::set<std::string> enabled = state.enabled();
  std::vector<int> out;
  for (int r = 1; r <= rounds; ++r) {
    if (!enabled.contains("agg-1")) out.push_back(r);
    std::map<std::string, double> delays;
    for (const auto& a : enabled) delays[a] = (a == "agg-1" && r >= from) ? 1000.0 : 100.0;
    enabled = coordinator_step(state, delays);
    EXPECT_FALSE(enabled.empty());
  }
  return out;
}

}  // namespace

TEST(Coordinator, EqualDelaysKeepEveryoneEnabled) {
  CoordinatorState state({"a", "b", "c"});
  for (int r = 0; r < 10; ++r)
    EXPECT_EQ(coordinator_step(state, {{"a", 50}, {"b", 50}, {"c", 50}}), (std::set<std::string>{"a", "b", "c"}));
}

TEST(Coordinator, ThresholdIsTwiceMedianOfOthers) {
  EXPECT_FALSE(is_straggler("a", {{"a", 200}, {"b", 100}, {"c", 100}}, 2.0));
  EXPECT_TRUE(is_straggler("a", {{"a", 201}, {"b", 100}, {"c", 100}}, 2.0));
  EXPECT_TRUE(is_straggler("a", {{"a", 401}, {"b", 100}, {"c", 300}}, 2.0));
  EXPECT_FALSE(is_straggler("a", {{"a", 400}, {"b", 100}, {"c", 300}}, 2.0));
}

TEST(Coordinator, ExclusionScheduleDoublesWithProbes) {
  auto excluded = excluded_rounds(60, 6);
  std::vector<int> expected{9};
  for (int r = 11; r <= 12; ++r) expected.push_back(r);
  for (int r = 14; r <= 17; ++r) expected.push_back(r);
  for (int r = 19; r <= 26; ++r) expected.push_back(r);
  for (int r = 28; r <= 43; ++r) expected.push_back(r);
  for (int r = 45; r <= 60; ++r) expected.push_back(r);
  EXPECT_EQ(excluded, expected);
}

TEST(Coordinator, ExclusionBlockStartsMatchReportedRounds) {
  auto excluded = excluded_rounds(44, 6);
  std::map<int, int> blocks;  // start -> length
  for (std::size_t i = 0; i < excluded.size(); ++i) {
    if (i == 0 || excluded[i] != excluded[i - 1] + 1) blocks[excluded[i]] = 0;
    blocks.rbegin()->second += 1;
  }
  EXPECT_EQ(blocks.at(14), 4);
  EXPECT_EQ(blocks.at(19), 8);
  EXPECT_EQ(blocks.at(28), 16);
}

TEST(Coordinator, CleanProbeResetsBackoff) {
  CoordinatorState state({"a", "b"});
  std::set<std::string> enabled{"a", "b"};
  for (int r = 0; r < 3; ++r) enabled = coordinator_step(state, {{"a", 100}, {"b", 900}});
  EXPECT_EQ(enabled, std::set<std::string>{"a"});
  enabled = coordinator_step(state, {{"a", 100}});
  EXPECT_EQ(enabled.size(), 2u);
  enabled = coordinator_step(state, {{"a", 100}, {"b", 100}});
  EXPECT_EQ(state.aggregators.at("b").exclusions, 0);
  for (int r = 0; r < 3; ++r) enabled = coordinator_step(state, {{"a", 100}, {"b", 900}});
  EXPECT_EQ(state.aggregators.at("b").remaining, 1);
}

TEST(Coordinator, CapsAtSixteenRounds) {
  auto excluded = excluded_rounds(200, 1);
  int longest = 0;
  int run = 0;
  for (std::size_t i = 0; i < excluded.size(); ++i) {
    run = (i > 0 && excluded[i] == excluded[i - 1] + 1) ? run + 1 : 1;
    longest = std::max(longest, run);
  }
  EXPECT_EQ(longest, 16);
}

TEST(Coordinator, RandomTracesMatchReplayOracleAndStayNonEmpty) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 2 + trial % 4;
    std::vector<std::string> names;
    for (int i = 0; i < k; ++i) names.push_back("agg-" + std::to_string(i));
    CoordinatorState state(names);
    std::map<std::string, OracleAgg> oracle;
    for (const auto& n : names) oracle[n];
    std::set<std::string> enabled(names.begin(), names.end());
    std::bernoulli_distribution slow(0.4);
    std::uniform_real_distribution<double> base(50, 150);
    for (int r = 0; r < 80; ++r) {
      std::map<std::string, double> delays;
      for (const auto& a : enabled) delays[a] = base(rng) * (slow(rng) ? 10 : 1);
      enabled = coordinator_step(state, delays);
      ASSERT_EQ(enabled, oracle_step(oracle, delays)) << "trial " << trial << " round " << r;
      ASSERT_FALSE(enabled.empty());
      for (const auto& [n, b] : state.aggregators) ASSERT_LE(b.remaining, 16);
    }
  }
}

TEST(Coordinator, TwoStragglersTrackedIndependently) {
  CoordinatorState state({"a", "b", "c", "d"});
  std::set<std::string> enabled = state.enabled();
  std::map<std::string, std::vector<int>> excluded;
  for (int r = 1; r <= 30; ++r) {
    for (const auto& n : {"c", "d"})
      if (!enabled.contains(n)) excluded[n].push_back(r);
    std::map<std::string, double> delays;
    for (const auto& a : enabled) {
      double d = 100;
      if (a == "c" && r >= 2) d = 1000;
      if (a == "d" && r >= 5) d = 1000;
      delays[a] = d;
    }
    enabled = coordinator_step(state, delays);
  }
  EXPECT_EQ(excluded["c"].front(), 5);
  EXPECT_EQ(excluded["d"].front(), 8);
  EXPECT_EQ(excluded["c"], (std::vector<int>{5, 7, 8, 10, 11, 12, 13, 15, 16, 17, 18, 19, 20, 21, 22, 24, 25, 26, 27, 28,
                                             29, 30}));
}

TEST(Coordinator, NeverExcludesTheLastEnabledAggregator) {
  CoordinatorState state({"a", "b"});
  // Both look slow relative to each other only if the threshold is tiny.
  state.threshold = 0.5;
  for (int r = 0; r < 20; ++r) {
    auto enabled = coordinator_step(state, {{"a", 100}, {"b", 100}});
    ASSERT_FALSE(enabled.empty());
  }
}

TEST(Coordinator, FloorSuppressesJitterBetweenFastAggregators) {
  EXPECT_TRUE(is_straggler("a", {{"a", 0.09}, {"b", 0.02}}, 2.0));
  EXPECT_FALSE(is_straggler("a", {{"a", 0.09}, {"b", 0.02}}, 2.0, 5.0));
  EXPECT_TRUE(is_straggler("a", {{"a", 300}, {"b", 0.02}}, 2.0, 5.0));
}
