// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <httplib.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "flame/control/client.hpp"
#include "flame/control/server.hpp"

namespace {

using namespace flame;
using namespace flame::control;
namespace fs = std::filesystem;
using namespace std::chrono_literals;

ordered_json two_region_doc() {
  std::ifstream in(std::string(FLAME_SOURCE_DIR) + "/samples/hfl_two_region.json");
  return ordered_json::parse(in);
}

void register_two_region(const ApiClient& api) {
  api.register_compute({"west", "us/west", "", 8});
  api.register_compute({"east", "us/east", "", 8});
  api.register_compute({"cloud", "us", "", 8});
  for (auto [id, realm] : {std::pair{"A", "us/west"}, {"B", "us/west"}, {"C", "us/east"}, {"D", "us/east"}})
    api.register_dataset({id, realm, std::string("synthetic:?seed=") + id, ""});
}

// Retries while the server still holds the previous stream of `sub`.
void subscribe_retry(const ApiClient& api, const std::string& sub, const std::function<bool(const Event&)>& on_event,
                     const std::function<bool()>& keep_going) {
  for (int attempt = 0;; ++attempt) {
    try {
      api.subscribe(sub, on_event, keep_going);
      return;
    } catch (const ApiError& e) {
      if (e.code() != "SubscriberBusy" || attempt == 20) throw;
      std::this_thread::sleep_for(50ms);
    }
  }
}

struct Stack {
  Controller controller;
  ApiServer server;
  ApiClient api;
  explicit Stack(ControllerOptions co = {}, ServerOptions so = {})
      : controller(std::move(co)), server(controller, so), api("127.0.0.1", server.port()) {}
};

int raw_status(std::uint16_t port, const std::string& method, const std::string& path, const std::string& body) {
  httplib::Client cli("127.0.0.1", port);
  auto r = method == "POST" ? cli.Post(path, body, "application/json") : cli.Put(path, body, "application/json");
  return r ? r->status : -1;
}

TEST(Rest, RegistrationRoundTrip) {
  Stack s;
  EXPECT_EQ(s.api.register_compute({"edge", "us/west", "", 2}), "edge");
  const auto list = s.api.get("/computes");
  ASSERT_EQ(list.size(), 1u);
  EXPECT_EQ(list[0]["realm"], "us/west");
  EXPECT_EQ(list[0]["capacity"], 2);
}

TEST(Rest, ErrorStatusesAndBodies) {
  Stack s;
  s.api.register_compute({"edge", "us", "", 1});
  try {
    s.api.register_compute({"edge", "us", "", 1});
    FAIL();
  } catch (const ApiError& e) {
    EXPECT_EQ(e.status(), 409);
    EXPECT_EQ(e.code(), "DuplicateCompute");
  }
  EXPECT_EQ(raw_status(s.server.port(), "POST", "/computes", "{not json"), 400);
  EXPECT_EQ(raw_status(s.server.port(), "POST", "/computes", R"({"computeId":"x","realm":""})"), 422);
  try {
    s.api.job_status("0123");
    FAIL();
  } catch (const ApiError& e) {
    EXPECT_EQ(e.status(), 404);
    EXPECT_EQ(e.code(), "UnknownJob");
  }
}

TEST(Rest, InvalidSpecReturns422WithViolations) {
  Stack s;
  auto doc = two_region_doc();
  doc["roles"][0]["name"] = "Bad Name!";
  try {
    s.api.create_job(doc);
    FAIL();
  } catch (const ApiError& e) {
    EXPECT_EQ(e.status(), 422);
    EXPECT_EQ(e.code(), "ValidationFailed");
    ASSERT_TRUE(e.body().contains("violations"));
    EXPECT_FALSE(e.body()["violations"].empty());
  }
}

TEST(Rest, JobLifecycleOverHttp) {
  Stack s;
  register_two_region(s.api);
  const auto id = s.api.create_job(two_region_doc());
  EXPECT_EQ(s.api.job_status(id)["state"], "created");
  EXPECT_EQ(s.api.start_job(id)["state"], "deploying");
  try {
    s.api.start_job(id);
    FAIL();
  } catch (const ApiError& e) {
    EXPECT_EQ(e.code(), "WrongState");
    EXPECT_EQ(e.status(), 409);
  }
  const auto m = s.api.manifest(id, "trainer-2");
  EXPECT_EQ(m.dataset_id, "C");
  const auto tasks = s.api.job_status(id)["tasks"];
  for (const auto& [w, _] : tasks.items()) s.api.report_status(id, w, TaskStatus::Running);
  EXPECT_EQ(s.api.job_status(id)["state"], "running");
  for (const auto& [w, _] : tasks.items()) s.api.report_status(id, w, TaskStatus::Done);
  const auto st = s.api.job_status(id);
  EXPECT_EQ(st["state"], "completed");
  for (const auto& [w, t] : st["tasks"].items()) EXPECT_EQ(t["status"], "done") << w;
  EXPECT_EQ(s.api.get("/jobs/" + id + "?topology=1")["topology"]["workers"].size(), 7u);
}

TEST(Notifier, StreamsEventsAndReplaysUnacknowledged) {
  Stack s;
  register_two_region(s.api);
  const auto id = s.api.create_job(two_region_doc());
  s.api.start_job(id);

  std::vector<Event> first;
  s.api.subscribe("west", [&](const Event& e) {
    first.push_back(e);
    return false;
  }, [] { return true; });
  ASSERT_EQ(first.size(), 1u);
  EXPECT_EQ(first[0].kind, EventKind::Deploy);
  EXPECT_EQ(first[0].job_id, id);

  // Not acknowledged: a reconnect sees it again.
  std::vector<Event> again;
  subscribe_retry(s.api, "west", [&](const Event& e) {
    again.push_back(e);
    return false;
  }, [] { return true; });
  ASSERT_EQ(again.size(), 1u);
  EXPECT_EQ(again[0].id, first[0].id);

  s.api.ack("west", first[0].id);
  int polls = 0;
  std::vector<Event> after_ack;
  subscribe_retry(s.api, "west", [&](const Event& e) {
    after_ack.push_back(e);
    return false;
  }, [&] { return ++polls < 2; });
  EXPECT_TRUE(after_ack.empty());
}

TEST(Notifier, IdleStreamStaysOpenWithKeepalives) {
  ServerOptions so;
  so.keepalive = 100ms;
  Stack s({}, so);
  int polls = 0;
  const auto t0 = std::chrono::steady_clock::now();
  s.api.subscribe("idle", [](const Event&) { return true; }, [&] { return ++polls < 4; });
  EXPECT_EQ(polls, 4);
  EXPECT_GE(std::chrono::steady_clock::now() - t0, 250ms);
}

TEST(Notifier, SecondSubscriberWithSameIdRejected) {
  ServerOptions so;
  so.keepalive = 100ms;
  Stack s({}, so);
  std::atomic<bool> hold{true};
  std::atomic<int> polls{0};
  std::thread first([&] { s.api.subscribe("dup", [](const Event&) { return true; }, [&] { ++polls; return hold.load(); }); });
  while (polls.load() == 0) std::this_thread::sleep_for(10ms);
  try {
    s.api.subscribe("dup", [](const Event&) { return true; }, [] { return false; });
    ADD_FAILURE() << "second subscriber accepted";
  } catch (const ApiError& e) {
    EXPECT_EQ(e.status(), 409);
    EXPECT_EQ(e.code(), "SubscriberBusy");
  }
  hold = false;
  first.join();
  EXPECT_NO_THROW(subscribe_retry(s.api, "dup", [](const Event&) { return true; }, [] { return false; }));
}

TEST(Notifier, DeployEventReplayedAfterControllerRestart) {
  const auto dir = fs::temp_directory_path() / ("flame-server-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  ControllerOptions co;
  co.store_dir = dir;
  std::uint16_t port = 0;
  std::string id;
  std::uint64_t event_id = 0;
  {
    Stack s(co);
    port = s.server.port();
    register_two_region(s.api);
    id = s.api.create_job(two_region_doc());
    s.api.start_job(id);
    s.api.subscribe("east", [&](const Event& e) {
      event_id = e.id;
      return false;
    }, [] { return true; });
  }
  ASSERT_NE(event_id, 0u);
  ServerOptions so;
  so.port = port;
  Stack s(co, so);
  EXPECT_EQ(s.api.job_status(id)["state"], "deploying");
  std::vector<Event> replay;
  s.api.subscribe("east", [&](const Event& e) {
    replay.push_back(e);
    return false;
  }, [] { return true; });
  ASSERT_EQ(replay.size(), 1u);
  EXPECT_EQ(replay[0].id, event_id);
  EXPECT_EQ(replay[0].kind, EventKind::Deploy);
  fs::remove_all(dir);
}

TEST(Notifier, ServerDownRaisesServerUnavailable) {
  std::uint16_t port;
  {
    Stack s;
    port = s.server.port();
  }
  ApiClient api("127.0.0.1", port, 500ms);
  EXPECT_THROW(api.subscribe("x", [](const Event&) { return true; }, [] { return true; }), ServerUnavailable);
  EXPECT_THROW(api.job_status("x"), ServerUnavailable);
}

TEST(Client, UrlParsing) {
  EXPECT_EQ(ApiClient::from_url("http://127.0.0.1:8080/").url(), "http://127.0.0.1:8080");
  EXPECT_EQ(ApiClient::from_url("localhost:99").url(), "http://localhost:99");
  EXPECT_THROW(ApiClient::from_url("localhost"), Error);
  EXPECT_THROW(ApiClient::from_url("localhost:abc"), Error);
}

}  // namespace
