// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <regex>
#include <set>

#include "flame/control/controller.hpp"
#include "flame/expansion/expand.hpp"
#include "flame/tag/json.hpp"
#include "flame/templates/templates.hpp"

namespace {

using namespace flame;
using namespace flame::control;
namespace fs = std::filesystem;

ordered_json two_region_doc() {
  std::ifstream in(std::string(FLAME_SOURCE_DIR) + "/samples/hfl_two_region.json");
  return ordered_json::parse(in);
}

ordered_json cfl_doc() { return tag::job_spec_to_json(templates::make_template("C-FL")); }

struct TempDir {
  fs::path path;
  TempDir() {
    static int n = 0;
    path = fs::temp_directory_path() / ("flame-control-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct FakeClock {
  Clock::time_point t = Clock::now();
  std::function<Clock::time_point()> fn() {
    return [this] { return t; };
  }
};

void register_two_region_resources(Controller& c) {
  c.register_compute({"west-cluster", "us/west", "", 8});
  c.register_compute({"east-cluster", "us/east", "", 8});
  c.register_compute({"us-cloud", "us", "", 8});
  c.register_dataset({"A", "us/west", "synthetic:?seed=1", "alice"});
  c.register_dataset({"B", "us/west", "synthetic:?seed=2", "bob"});
  c.register_dataset({"C", "us/east", "synthetic:?seed=3", "carol"});
  c.register_dataset({"D", "us/east", "synthetic:?seed=4", "dave"});
}

std::vector<Event> all_events(const Controller& c) {
  std::vector<Event> out;
  for (const auto* sub : {"west-cluster", "east-cluster", "us-cloud"})
    for (auto& e : c.pending_events(sub)) out.push_back(e);
  return out;
}

void report_all(Controller& c, const std::string& job, TaskStatus s) {
  for (const auto& [w, _] : c.job(job).tasks) c.update_task_status(job, w, s);
}

TEST(Registry, ComputeIsListedAfterRegistration) {
  Controller c;
  c.register_compute({"edge-1", "us/west", "", 2});
  ASSERT_EQ(c.computes().size(), 1u);
  EXPECT_EQ(c.computes()[0].realm, "us/west");
}

TEST(Registry, DuplicateComputeRejected) {
  Controller c;
  c.register_compute({"edge-1", "us", "", 1});
  EXPECT_THROW(c.register_compute({"edge-1", "eu", "", 1}), DuplicateCompute);
}

TEST(Registry, EmptyRealmIsSchemaError) {
  Controller c;
  EXPECT_THROW(c.register_compute({"edge-1", "", "", 1}), tag::SchemaError);
  EXPECT_THROW(c.register_dataset({"A", "", "synthetic:", ""}), tag::SchemaError);
}

TEST(Registry, DatasetRealmWithoutComputeFailsAtExpansion) {
  Controller c;
  c.register_compute({"us-1", "us", "", 4});
  c.register_dataset({"A", "eu", "synthetic:?seed=1", "x"});
  auto doc = cfl_doc();
  doc["datasetGroups"] = {{"default", {"A"}}};
  for (auto& r : doc["roles"])
    if (r.value("isDataConsumer", false)) r["groupAssociation"] = ordered_json::array({{{"param-channel", "default"}}});
  for (auto& ch : doc["channels"]) ch["groupBy"] = ordered_json::array({"default"});
  const auto id = c.create_job(doc);
  EXPECT_THROW(c.start_job(id), expansion::NoComputeForRealm);
  EXPECT_EQ(c.job(id).state, JobState::Created);
}

TEST(Lifecycle, CreateGivesDistinctHexIds) {
  Controller c;
  const auto a = c.create_job(two_region_doc());
  const auto b = c.create_job(two_region_doc());
  EXPECT_NE(a, b);
  EXPECT_TRUE(std::regex_match(a, std::regex("[0-9a-f]{32}")));
  EXPECT_EQ(c.job(a).state, JobState::Created);
  EXPECT_FALSE(c.job(a).topology.has_value());
}

TEST(Lifecycle, InvalidSpecEchoesReport) {
  Controller c;
  auto doc = two_region_doc();
  doc["channels"][0]["pair"] = {"trainer", "nobody"};
  try {
    c.create_job(doc);
    FAIL() << "accepted an invalid spec";
  } catch (const ValidationFailed& e) {
    EXPECT_FALSE(e.report().ok());
    EXPECT_TRUE(e.report().has(tag::codes::kUnknownRole));
  }
  EXPECT_TRUE(c.job_ids().empty());
}

TEST(Lifecycle, StartExpandsAndGroupsDeployEventsByCompute) {
  Controller c;
  register_two_region_resources(c);
  const auto id = c.create_job(two_region_doc());
  c.start_job(id);
  const auto job = c.job(id);
  EXPECT_EQ(job.state, JobState::Deploying);
  ASSERT_TRUE(job.topology.has_value());
  EXPECT_EQ(job.tasks.size(), 7u);

  std::map<std::string, std::set<std::string>> expected;
  for (const auto& w : job.topology->workers) expected[w.compute_id].insert(w.worker_id);
  std::map<std::string, std::set<std::string>> got;
  std::size_t total = 0;
  for (const auto& e : all_events(c)) {
    EXPECT_EQ(e.kind, EventKind::Deploy);
    for (const auto& w : e.payload.at("workers")) got[e.target].insert(w.get<std::string>());
    total += e.payload.at("workers").size();
  }
  EXPECT_EQ(got, expected);
  EXPECT_EQ(total, 7u);
  EXPECT_EQ(got["west-cluster"].count("trainer-0") + got["west-cluster"].count("trainer-1"), 2u);
}

TEST(Lifecycle, CflAcrossTwoComputesEmitsTwoDeployEvents) {
  Controller c;
  c.register_compute({"edge", "us/west", "", 8});
  c.register_compute({"cloud", "us", "", 8});
  auto doc = cfl_doc();
  doc["datasetGroups"] = {{"default", {"A", "B"}}};
  for (auto& r : doc["roles"])
    if (r.value("isDataConsumer", false))
      r["groupAssociation"] = ordered_json::array({{{"param-channel", "default"}}});
  for (auto& ch : doc["channels"]) ch["groupBy"] = ordered_json::array({"default"});
  c.register_dataset({"A", "us/west", "synthetic:?seed=1", ""});
  c.register_dataset({"B", "us/west", "synthetic:?seed=2", ""});
  const auto id = c.create_job(doc);
  c.start_job(id);
  const auto edge = c.pending_events("edge");
  const auto cloud = c.pending_events("cloud");
  std::set<std::string> computes;
  for (const auto& w : c.job(id).topology->workers) computes.insert(w.compute_id);
  EXPECT_EQ(edge.size() + cloud.size(), computes.size());
  EXPECT_EQ(edge.size(), 1u);
}

TEST(Lifecycle, StartTwiceIsWrongState) {
  Controller c;
  register_two_region_resources(c);
  const auto id = c.create_job(two_region_doc());
  c.start_job(id);
  EXPECT_THROW(c.start_job(id), WrongState);
}

TEST(Lifecycle, RunningThenCompleted) {
  Controller c;
  register_two_region_resources(c);
  const auto id = c.create_job(two_region_doc());
  c.start_job(id);
  auto tasks = c.job(id).tasks;
  auto it = tasks.begin();
  c.update_task_status(id, it->first, TaskStatus::Running);
  EXPECT_EQ(c.job(id).state, JobState::Deploying);
  report_all(c, id, TaskStatus::Running);
  EXPECT_EQ(c.job(id).state, JobState::Running);
  report_all(c, id, TaskStatus::Done);
  EXPECT_EQ(c.job(id).state, JobState::Completed);
  const auto t = c.transitions();
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t[2].to, JobState::Completed);
}

TEST(Lifecycle, FastTasksPassThroughRunning) {
  Controller c;
  register_two_region_resources(c);
  const auto id = c.create_job(two_region_doc());
  c.start_job(id);
  report_all(c, id, TaskStatus::Done);
  EXPECT_EQ(c.job(id).state, JobState::Completed);
  std::vector<JobState> path;
  for (const auto& t : c.transitions()) path.push_back(t.to);
  EXPECT_EQ(path, (std::vector{JobState::Deploying, JobState::Running, JobState::Completed}));
}

TEST(Lifecycle, TaskFailureFailsJobAndBroadcastsRevoke) {
  Controller c;
  register_two_region_resources(c);
  const auto id = c.create_job(two_region_doc());
  c.start_job(id);
  for (const auto& e : all_events(c)) c.ack(e.target, e.id);
  report_all(c, id, TaskStatus::Running);
  for (const auto& e : all_events(c)) c.ack(e.target, e.id);
  c.update_task_status(id, "trainer-2", TaskStatus::Failed, "exit code 1");
  EXPECT_EQ(c.job(id).state, JobState::Failed);
  std::set<std::string> revoked;
  for (const auto& e : all_events(c))
    if (e.kind == EventKind::Revoke) revoked.insert(e.target);
  EXPECT_EQ(revoked, (std::set<std::string>{"west-cluster", "east-cluster", "us-cloud"}));
}

TEST(Lifecycle, UnknownWorkerStatusRejected) {
  Controller c;
  register_two_region_resources(c);
  const auto id = c.create_job(two_region_doc());
  c.start_job(id);
  EXPECT_THROW(c.update_task_status(id, "trainer-99", TaskStatus::Running), UnknownWorker);
  EXPECT_THROW(c.update_task_status("nope", "trainer-0", TaskStatus::Running), UnknownJob);
}

TEST(Lifecycle, StopWaitsForRevokeAcknowledgments) {
  Controller c;
  register_two_region_resources(c);
  const auto id = c.create_job(two_region_doc());
  c.start_job(id);
  report_all(c, id, TaskStatus::Running);
  for (const auto& e : all_events(c)) c.ack(e.target, e.id);
  c.stop_job(id);
  EXPECT_EQ(c.job(id).state, JobState::Running);
  const auto revokes = all_events(c);
  ASSERT_EQ(revokes.size(), 3u);
  c.ack(revokes[0].target, revokes[0].id);
  c.ack(revokes[1].target, revokes[1].id);
  EXPECT_EQ(c.job(id).state, JobState::Running);
  c.ack(revokes[2].target, revokes[2].id);
  EXPECT_EQ(c.job(id).state, JobState::Stopped);
  EXPECT_NO_THROW(c.update_task_status(id, "trainer-0", TaskStatus::Terminated));
}

TEST(Lifecycle, StopCompletedJobIsWrongState) {
  Controller c;
  register_two_region_resources(c);
  const auto id = c.create_job(two_region_doc());
  EXPECT_THROW(c.stop_job(id), WrongState);
  c.start_job(id);
  report_all(c, id, TaskStatus::Done);
  EXPECT_THROW(c.stop_job(id), WrongState);
}

TEST(Lifecycle, StopDuringDeployingIsPermitted) {
  Controller c;
  register_two_region_resources(c);
  const auto id = c.create_job(two_region_doc());
  c.start_job(id);
  c.stop_job(id);
  report_all(c, id, TaskStatus::Terminated);
  EXPECT_EQ(c.job(id).state, JobState::Stopped);
}

TEST(Lifecycle, MissedHeartbeatsFailTask) {
  FakeClock clock;
  ControllerOptions o;
  o.clock = clock.fn();
  o.heartbeat_period = std::chrono::milliseconds(2000);
  Controller c(o);
  register_two_region_resources(c);
  const auto id = c.create_job(two_region_doc());
  c.start_job(id);
  report_all(c, id, TaskStatus::Running);
  clock.t += std::chrono::milliseconds(9000);
  report_all(c, id, TaskStatus::Running);
  clock.t += std::chrono::milliseconds(9000);
  EXPECT_EQ(c.check_heartbeats(), 0u);
  for (const auto& [w, _] : c.job(id).tasks)
    if (w != "aggregator-1") c.update_task_status(id, w, TaskStatus::Running);
  clock.t += std::chrono::milliseconds(1001);
  EXPECT_EQ(c.check_heartbeats(), 1u);
  const auto job = c.job(id);
  EXPECT_EQ(job.state, JobState::Failed);
  EXPECT_EQ(job.tasks.at("aggregator-1").status, TaskStatus::Failed);
  EXPECT_EQ(job.tasks.at("aggregator-1").detail, "heartbeat lost");
}

TEST(Slots, ClaimRules) {
  Controller c;
  register_two_region_resources(c);
  const auto id = c.create_job(two_region_doc());
  c.start_job(id, {"trainer-3"});
  EXPECT_TRUE(c.job(id).tasks.at("trainer-3").unmanaged);
  EXPECT_THROW(c.claim_slot(id, "trainer-3"), JobNotRunning);
  for (const auto& e : all_events(c))
    for (const auto& w : e.payload.at("workers")) EXPECT_NE(w.get<std::string>(), "trainer-3");
  for (const auto& [w, t] : c.job(id).tasks)
    if (!t.unmanaged) c.update_task_status(id, w, TaskStatus::Running);
  EXPECT_EQ(c.job(id).state, JobState::Running);
  EXPECT_THROW(c.claim_slot(id, "trainer-0"), NotUnmanaged);
  const auto m = c.claim_slot(id, "trainer-3");
  EXPECT_EQ(m.worker_id, "trainer-3");
  EXPECT_EQ(m.dataset_id, "D");
  EXPECT_THROW(c.claim_slot(id, "trainer-3"), SlotAlreadyFilled);
  report_all(c, id, TaskStatus::Done);
  EXPECT_EQ(c.job(id).state, JobState::Completed);
  EXPECT_THROW(c.claim_slot(id, "trainer-3"), JobNotRunning);
}

TEST(Slots, OnlyDataConsumersCanBeUnmanaged) {
  Controller c;
  register_two_region_resources(c);
  const auto id = c.create_job(two_region_doc());
  EXPECT_THROW(c.start_job(id, {"aggregator-0"}), NotUnmanaged);
  EXPECT_THROW(c.start_job(id, {"trainer-9"}), UnknownWorker);
  EXPECT_EQ(c.job(id).state, JobState::Created);
}

TEST(Manifests, SelfSufficientManifestPerWorker) {
  ControllerOptions o;
  o.broker_port = 4242;
  o.artifact_root = "/tmp/art";
  Controller c(o);
  register_two_region_resources(c);
  const auto id = c.create_job(two_region_doc());
  c.start_job(id);
  const auto m = c.manifest(id, "trainer-1");
  EXPECT_EQ(m.job_id, id);
  EXPECT_EQ(m.role, "trainer");
  EXPECT_EQ(m.dataset_url, "synthetic:?seed=2");
  EXPECT_EQ(m.broker_port, 4242);
  EXPECT_EQ(m.artifact_dir, "/tmp/art/" + id);
  EXPECT_EQ(m.hyper("rounds", 0), 3);
  EXPECT_THROW(c.manifest(id, "ghost"), UnknownWorker);
}

TEST(Durability, RestartRecoversJobsAndUnackedEvents) {
  TempDir dir;
  ControllerOptions o;
  o.store_dir = dir.path;
  std::string id;
  JobRecord before;
  std::uint64_t acked = 0;
  {
    Controller c(o);
    register_two_region_resources(c);
    id = c.create_job(two_region_doc());
    c.start_job(id);
    c.update_task_status(id, "trainer-0", TaskStatus::Running);
    const auto west = c.pending_events("west-cluster");
    ASSERT_EQ(west.size(), 1u);
    acked = west[0].id;
    c.ack("west-cluster", acked);
    before = c.job(id);
  }
  Controller c(o);
  EXPECT_EQ(c.job(id), before);
  EXPECT_EQ(c.computes().size(), 3u);
  EXPECT_EQ(c.datasets().size(), 4u);
  EXPECT_TRUE(c.pending_events("west-cluster").empty());
  const auto east = c.pending_events("east-cluster");
  ASSERT_EQ(east.size(), 1u);
  EXPECT_EQ(east[0].kind, EventKind::Deploy);
  EXPECT_NE(east[0].id, acked);
  report_all(c, id, TaskStatus::Done);
  EXPECT_EQ(c.job(id).state, JobState::Completed);
}

TEST(Durability, SnapshotsAndTornJournalTail) {
  TempDir dir;
  ControllerOptions o;
  o.store_dir = dir.path;
  o.snapshot_every = 3;
  std::vector<std::string> ids;
  {
    Controller c(o);
    register_two_region_resources(c);
    for (int i = 0; i < 5; ++i) ids.push_back(c.create_job(two_region_doc()));
    c.start_job(ids[0]);
  }
  EXPECT_TRUE(fs::exists(dir.path / "snapshot.json"));
  {
    std::ofstream tail(dir.path / "journal.jsonl", std::ios::app);
    tail << "{\"seq\": 99999, \"entry\": {\"batch\": [";
  }
  Controller c(o);
  EXPECT_EQ(c.job_ids().size(), 5u);
  EXPECT_EQ(c.job(ids[0]).state, JobState::Deploying);
  EXPECT_EQ(c.job(ids[1]).state, JobState::Created);
}

TEST(Durability, StaleJournalEntriesBehindSnapshotAreSkipped) {
  TempDir dir;
  fs::create_directories(dir.path);
  Store s(dir.path, 1000);
  s.load();
  s.append({{"batch", ordered_json::array({{{"ack", 1}}})}});
  s.append({{"batch", ordered_json::array({{{"ack", 2}}})}});
  // Snapshot at seq 2 written, journal not yet truncated.
  {
    std::ofstream snap(dir.path / "snapshot.json");
    snap << ordered_json{{"seq", 2}, {"state", {{"x", 1}}}}.dump();
  }
  s.append({{"batch", ordered_json::array({{{"ack", 3}}})}});
  Store again(dir.path, 1000);
  const auto loaded = again.load();
  EXPECT_EQ(loaded.snapshot, (ordered_json{{"x", 1}}));
  ASSERT_EQ(loaded.entries.size(), 1u);
  EXPECT_EQ(loaded.entries[0]["batch"][0]["ack"], 3);
}

// ---- state-machine soundness ----

// Independent copy of the lifecycle relation.
const std::map<std::string, std::set<std::string>> kLegal{
    {"created", {"deploying"}},
    {"deploying", {"running", "failed", "stopped"}},
    {"running", {"completed", "failed", "stopped"}},
    {"completed", {}},
    {"failed", {}},
    {"stopped", {}},
};

bool reachable(const std::string& from, const std::string& to, int max_steps) {
  if (from == to) return true;
  if (max_steps == 0) return false;
  for (const auto& next : kLegal.at(from))
    if (reachable(next, to, max_steps - 1)) return true;
  return false;
}

TEST(Soundness, RandomOperationSequencesNeverTransitionIllegally) {
  std::size_t ops = 0;
  std::size_t transitions_checked = 0;
  std::map<std::string, std::size_t> terminal_seen;
  for (int seq = 0; seq < 500; ++seq) {
    std::mt19937_64 rng(seq);
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    TempDir dir;
    FakeClock clock;
    ControllerOptions o;
    o.store_dir = dir.path;
    o.snapshot_every = static_cast<std::size_t>(pick(2, 20));
    o.clock = clock.fn();
    auto c = std::make_unique<Controller>(o);
    register_two_region_resources(*c);
    std::vector<std::string> jobs;
    std::map<std::string, std::string> observed;
    auto check_all = [&](const Controller& ctl) {
      for (const auto& id : jobs) {
        const auto job = ctl.job(id);
        const std::string now(to_string(job.state));
        ASSERT_TRUE(reachable(observed[id], now, 2)) << "seq " << seq << ": " << observed[id] << " -> " << now;
        observed[id] = now;
        ASSERT_EQ(job.topology.has_value(), job.state != JobState::Created) << "seq " << seq;
        ASSERT_EQ(job.tasks.empty(), job.state == JobState::Created) << "seq " << seq;
      }
      for (const auto& t : ctl.transitions()) {
        ASSERT_TRUE(kLegal.at(std::string(to_string(t.from))).contains(std::string(to_string(t.to))));
        ++transitions_checked;
      }
    };
    const int steps = pick(10, 40);
    for (int step = 0; step < steps; ++step) {
      ++ops;
      const int op = pick(0, 9);
      const std::string job = jobs.empty() || pick(0, 9) == 0 ? "missing" : jobs[pick(0, jobs.size() - 1)];
      try {
        switch (op) {
          case 0:
            jobs.push_back(c->create_job(two_region_doc()));
            observed[jobs.back()] = "created";
            break;
          case 1:
            c->start_job(job, pick(0, 2) == 0 ? std::vector<std::string>{"trainer-" + std::to_string(pick(0, 3))}
                                              : std::vector<std::string>{});
            break;
          case 2:
          case 3:
          case 4: {
            const std::string worker = pick(0, 8) == 0 ? "ghost"
                                       : pick(0, 1)    ? "trainer-" + std::to_string(pick(0, 3))
                                                       : "aggregator-" + std::to_string(pick(0, 1));
            const auto status = static_cast<TaskStatus>(pick(0, 5));
            if (pick(0, 2) == 0)
              report_all(*c, job, status);
            else
              c->update_task_status(job, worker, status);
            break;
          }
          case 5:
            c->stop_job(job);
            break;
          case 6: {
            auto events = all_events(*c);
            if (!events.empty()) {
              const auto& e = events[pick(0, events.size() - 1)];
              c->ack(e.target, e.id);
            }
            break;
          }
          case 7:
            clock.t += std::chrono::milliseconds(pick(0, 12000));
            c->check_heartbeats();
            break;
          case 8:
            c->claim_slot(job, "trainer-" + std::to_string(pick(0, 3)));
            break;
          case 9: {
            std::map<std::string, JobRecord> before;
            for (const auto& id : jobs) before[id] = c->job(id);
            check_all(*c);
            c.reset();
            c = std::make_unique<Controller>(o);
            for (const auto& id : jobs) ASSERT_EQ(c->job(id), before[id]) << "seq " << seq << " lost state of " << id;
            break;
          }
        }
      } catch (const flame::Error&) {
        // Rejected operations are part of the exploration.
      }
      check_all(*c);
      if (HasFatalFailure()) return;
    }
    for (const auto& [id, s] : observed) ++terminal_seen[s];
  }
  EXPECT_GE(ops, 500u * 10);
  EXPECT_GT(transitions_checked, 1000u);
  // The exploration reaches every terminal state.
  EXPECT_GT(terminal_seen["completed"], 0u);
  EXPECT_GT(terminal_seen["failed"], 0u);
  EXPECT_GT(terminal_seen["stopped"], 0u);
}

}  // namespace
