// SPDX-License-Identifier: Apache-2.0
#include <random>

#include <gtest/gtest.h>

#include "flame/tasklet/tasklet.hpp"

using namespace flame::tasklet;

namespace {

struct State {
  std::vector<std::string> trace;
  int rounds = 0;
  int target = 2;
  bool stop = false;
};

using T = Tasklet<State>;
using C = Chain<State>;

T rec(const std::string& alias) {
  return tasklet<State>(alias, [alias](State& s) { s.trace.push_back(alias); });
}

std::vector<std::string> run_trace(const C& chain, State s = {}) {
  chain.run(s);
  return s.trace;
}

bool rounds_done(State& s) { return s.rounds >= s.target; }

C trainer_base() {
  return rec("load") >> rec("init") >>
         loop<State>(rounds_done, rec("get") >> rec("train") >> rec("eval") >>
                                      tasklet<State>("put", [](State& s) {
                                        s.trace.push_back("put");
                                        ++s.rounds;
                                      }));
}

}  // namespace

TEST(Chain, RunsInDeclaredOrder) {
  EXPECT_EQ(run_trace(rec("load") >> rec("init") >> rec("train")),
            (std::vector<std::string>{"load", "init", "train"}));
}

TEST(Chain, SingleTaskletRunsOnce) { EXPECT_EQ(run_trace(C(rec("only"))), std::vector<std::string>{"only"}); }

TEST(Chain, EmptyChainIsNoop) {
  State s;
  EXPECT_EQ(C().run(s), RunResult::Completed);
  EXPECT_TRUE(s.trace.empty());
}

TEST(Chain, SelfChainingIsDuplicateAlias) {
  auto a = rec("a");
  EXPECT_THROW(a >> a, DuplicateAlias);
}

TEST(Chain, ChainingIsAssociative) {
  auto left = (rec("a") >> rec("b")) >> rec("c");
  auto right = rec("a") >> (rec("b") >> rec("c"));
  EXPECT_EQ(left.aliases(), right.aliases());
  EXPECT_EQ(run_trace(left), run_trace(right));
}

TEST(Loop, PredicateTrueImmediatelyRunsOnce) {
  auto chain = loop<State>([](State&) { return true; }, rec("x") >> rec("y"));
  EXPECT_EQ(run_trace(chain), (std::vector<std::string>{"x", "y"}));
}

TEST(Loop, CounterPredicateRunsThreeTimes) {
  auto chain = loop<State>([](State& s) { return ++s.rounds >= 3; }, C(rec("x")));
  EXPECT_EQ(run_trace(chain), (std::vector<std::string>{"x", "x", "x"}));
}

TEST(Loop, BodyMutationVisibleToPredicate) {
  auto chain = loop<State>([](State& s) { return s.rounds == 4; },
                           C(tasklet<State>("inc", [](State& s) { ++s.rounds; })));
  State s;
  chain.run(s);
  EXPECT_EQ(s.rounds, 4);
}

TEST(Loop, NestingRejected) {
  auto inner = loop<State>([](State&) { return true; }, C(rec("x")));
  EXPECT_THROW(loop<State>([](State&) { return true; }, rec("y") >> inner), NestedLoop);
}

TEST(Run, TrainerBaseTraceForTwoRounds) {
  EXPECT_EQ(run_trace(trainer_base()), (std::vector<std::string>{"load", "init", "get", "train", "eval", "put", "get",
                                                                  "train", "eval", "put"}));
}

TEST(Run, FailureCarriesAlias) {
  auto chain = rec("ok") >> tasklet<State>("boom", [](State&) { throw std::runtime_error("bad"); }) >> rec("never");
  State s;
  try {
    chain.run(s);
    FAIL();
  } catch (const TaskFailure& f) {
    EXPECT_EQ(f.alias(), "boom");
    EXPECT_EQ(f.cause(), "bad");
  }
  EXPECT_EQ(s.trace, std::vector<std::string>{"ok"});
}

TEST(Run, StopsAtTaskletBoundary) {
  auto chain = rec("a") >> tasklet<State>("b", [](State& s) {
                 s.trace.push_back("b");
                 s.stop = true;
               }) >> rec("c");
  State s;
  RunOptions<State> opts;
  opts.stop_requested = [&] { return s.stop; };
  EXPECT_EQ(chain.run(s, opts), RunResult::Stopped);
  EXPECT_EQ(s.trace, (std::vector<std::string>{"a", "b"}));
}

TEST(Run, ObserverSeesIterations) {
  std::vector<std::pair<std::string, int>> seen;
  RunOptions<State> opts;
  opts.observer = [&](const TraceEvent& e) {
    EXPECT_GE(e.duration_ms, 0);
    seen.emplace_back(e.alias, e.iteration);
  };
  State s;
  auto chain = rec("init") >> loop<State>([](State& st) { return ++st.rounds == 2; }, C(rec("step")));
  chain.run(s, opts);
  EXPECT_EQ(seen, (std::vector<std::pair<std::string, int>>{{"init", 0}, {"step", 1}, {"step", 2}}));
}

TEST(Edit, GetTaskletUnknown) {
  auto chain = trainer_base();
  EXPECT_THROW(chain.get_tasklet("nope"), UnknownAlias);
  chain.get_tasklet("eval").remove();
  EXPECT_THROW(chain.get_tasklet("eval"), UnknownAlias);
}

TEST(Edit, InsertBeforeInheritsLoop) {
  auto chain = rec("init") >> loop<State>([](State& s) { return ++s.rounds == 2; },
                                          rec("distribute") >> rec("gather") >> rec("aggregate"));
  chain.get_tasklet("distribute").insert_before(rec("get_coord_ends"));
  EXPECT_EQ(chain.describe(), "init (get_coord_ends distribute gather aggregate)");
  EXPECT_EQ(run_trace(chain), (std::vector<std::string>{"init", "get_coord_ends", "distribute", "gather", "aggregate",
                                                        "get_coord_ends", "distribute", "gather", "aggregate"}));
}

TEST(Edit, InsertAfterAndDuplicate) {
  auto chain = rec("a") >> rec("b");
  chain.get_tasklet("a").insert_after(rec("a2"));
  EXPECT_EQ(chain.aliases(), (std::vector<std::string>{"a", "a2", "b"}));
  EXPECT_THROW(chain.get_tasklet("b").insert_after(rec("a")), DuplicateAlias);
}

TEST(Edit, RemoveKeepsNeighbours) {
  auto chain = rec("init") >> loop<State>(rounds_done, rec("x") >> tasklet<State>("y", [](State& s) {
                                                         s.trace.push_back("y");
                                                         ++s.rounds;
                                                       })) >>
               rec("end_of_train");
  chain.get_tasklet("end_of_train").remove();
  EXPECT_EQ(run_trace(chain), (std::vector<std::string>{"init", "x", "y", "x", "y"}));
}

TEST(Edit, ReplaceHead) {
  auto chain = rec("a") >> rec("b");
  auto ref = chain.get_tasklet("a");
  ref.replace_with(rec("z"));
  EXPECT_EQ(chain.aliases().front(), "z");
  EXPECT_EQ(ref.alias(), "z");
  EXPECT_THROW(chain.get_tasklet("b").replace_with(rec("z")), DuplicateAlias);
  EXPECT_NO_THROW(chain.get_tasklet("b").replace_with(rec("b")));
}

TEST(Edit, CopiesAreIndependent) {
  auto base = rec("a") >> rec("b");
  auto copy = base;
  copy.get_tasklet("b").remove();
  EXPECT_EQ(base.size(), 2u);
  EXPECT_EQ(copy.size(), 1u);
}

namespace {

// Plain list model: alias plus loop flag (single loop level).
struct ModelEntry {
  std::string alias;
  bool in_loop;
  bool operator==(const ModelEntry&) const = default;
};

C build_from_model(const std::vector<ModelEntry>& model) {
  C out;
  std::size_t i = 0;
  while (i < model.size()) {
    if (!model[i].in_loop) {
      out = out >> rec(model[i].alias);
      ++i;
      continue;
    }
    C span;
    while (i < model.size() && model[i].in_loop) span = span >> rec(model[i++].alias);
    out = out >> loop<State>(rounds_done, span >> tasklet<State>("__tick" + std::to_string(i), [](State& s) { ++s.rounds; }));
  }
  return out;
}

}  // namespace

TEST(EditProperty, RandomEditScriptsMatchListModel) {
  std::mt19937 rng(21);
  int fresh = 0;
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<ModelEntry> model{{"a", false}, {"b", true}, {"c", true}, {"d", false}};
    auto chain = rec("a") >> loop<State>([](State&) { return true; }, rec("b") >> rec("c")) >> rec("d");
    for (int step = 0; step < 12 && !model.empty(); ++step) {
      auto idx = rng() % model.size();
      auto target = model[idx];
      auto ref = chain.get_tasklet(target.alias);
      auto name = "n" + std::to_string(fresh++);
      switch (rng() % 5) {
        case 0:
          ref.insert_before(rec(name));
          model.insert(model.begin() + static_cast<long>(idx), {name, target.in_loop});
          break;
        case 1:
          ref.insert_after(rec(name));
          model.insert(model.begin() + static_cast<long>(idx) + 1, {name, target.in_loop});
          break;
        case 2:
          ref.replace_with(rec(name));
          model[idx].alias = name;
          break;
        case 3:
          ref.remove();
          model.erase(model.begin() + static_cast<long>(idx));
          break;
        case 4: {
          auto other = model[rng() % model.size()].alias;
          EXPECT_THROW(ref.insert_before(rec(other)), DuplicateAlias);
          break;
        }
      }
      std::vector<std::string> expected;
      for (const auto& m : model) expected.push_back(m.alias);
      ASSERT_EQ(chain.aliases(), expected);
      // Loop span stays one contiguous block.
      auto spans = chain.loop_spans();
      std::vector<std::string> in_loop;
      for (const auto& m : model)
        if (m.in_loop) in_loop.push_back(m.alias);
      if (in_loop.empty())
        EXPECT_TRUE(spans.empty());
      else
        EXPECT_EQ(spans, std::vector<std::vector<std::string>>{in_loop});
    }
    // Running the edited chain gives the same trace as building it fresh.
    State s1;
    chain.run(s1);
    std::vector<std::string> expected;
    for (const auto& m : model) expected.push_back(m.alias);
    EXPECT_EQ(s1.trace, expected);
  }
}

TEST(EditProperty, EditedBaseEqualsFromScratch) {
  std::vector<ModelEntry> model{{"init", false}, {"distribute", true}, {"gather", true}, {"end", false}};
  auto base = build_from_model(model);
  base.get_tasklet("distribute").insert_before(rec("coord"));
  base.get_tasklet("end").remove();
  auto scratch = build_from_model({{"init", false}, {"coord", true}, {"distribute", true}, {"gather", true}});
  State a;
  State b;
  a.target = b.target = 3;
  base.run(a);
  scratch.run(b);
  EXPECT_EQ(a.trace, b.trace);
}
