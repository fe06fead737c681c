// SPDX-License-Identifier: Apache-2.0
// Editable chains of named execution units with a single level of loops.
//
//   auto chain = tasklet<S>("load", load) >> tasklet<S>("init", init) >>
//                loop<S>(done, tasklet<S>("train", train) >> tasklet<S>("put", put));
//   chain.get_tasklet("put").insert_before(tasklet<S>("eval", eval));
//   chain.run(state);
#pragma once

#include <chrono>
#include <exception>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "flame/common/error.hpp"

namespace flame::tasklet {

FLAME_DEFINE_ERROR(DuplicateAlias);
FLAME_DEFINE_ERROR(UnknownAlias);
FLAME_DEFINE_ERROR(NestedLoop);

class TaskFailure : public Error {
 public:
  TaskFailure(std::string alias, std::string cause, std::exception_ptr inner)
      : Error("TaskFailure", "tasklet '" + alias + "' failed: " + cause),
        alias_(std::move(alias)),
        cause_(std::move(cause)),
        inner_(std::move(inner)) {}

  const std::string& alias() const { return alias_; }
  const std::string& cause() const { return cause_; }
  const std::exception_ptr& inner() const { return inner_; }

 private:
  std::string alias_;
  std::string cause_;
  std::exception_ptr inner_;
};

struct TraceEvent {
  std::string alias;
  int iteration;  // 0 outside loops, 1-based inside
  double duration_ms;
};

enum class RunResult { Completed, Stopped };

template <class State>
struct RunOptions {
  std::function<bool()> stop_requested;
  std::function<void(const TraceEvent&)> observer;
};

template <class State>
class Chain;

template <class State>
struct Tasklet {
  std::string alias;
  std::function<void(State&)> body;
};

template <class State>
Tasklet<State> tasklet(std::string alias, std::function<void(State&)> body) {
  return {std::move(alias), std::move(body)};
}

namespace detail {

template <class State>
struct Node {
  std::string alias;
  std::function<void(State&)> body;
  int loop = 0;  // 0: not in a loop
};

template <class State>
struct ChainData {
  std::list<Node<State>> nodes;
  std::map<int, std::function<bool(State&)>> loops;
  int next_loop = 1;

  typename std::list<Node<State>>::iterator find(const std::string& alias) {
    for (auto it = nodes.begin(); it != nodes.end(); ++it)
      if (it->alias == alias) return it;
    throw UnknownAlias("no tasklet named '" + alias + "'");
  }

  void require_fresh(const std::string& alias, const std::string& except = {}) const {
    for (const auto& n : nodes)
      if (n.alias == alias && n.alias != except) throw DuplicateAlias("tasklet alias '" + alias + "' already in chain");
  }

  void drop_empty_loops() {
    std::erase_if(loops, [&](const auto& kv) {
      for (const auto& n : nodes)
        if (n.loop == kv.first) return false;
      return true;
    });
  }
};

}  // namespace detail

// Live reference to a tasklet inside a chain; edits go straight to the chain.
template <class State>
class TaskletRef {
 public:
  TaskletRef(std::shared_ptr<detail::ChainData<State>> data, std::string alias)
      : data_(std::move(data)), alias_(std::move(alias)) {}

  const std::string& alias() const { return alias_; }

  void insert_before(Tasklet<State> t) {
    auto it = data_->find(alias_);
    data_->require_fresh(t.alias);
    data_->nodes.insert(it, {std::move(t.alias), std::move(t.body), it->loop});
  }

  void insert_after(Tasklet<State> t) {
    auto it = data_->find(alias_);
    data_->require_fresh(t.alias);
    data_->nodes.insert(std::next(it), {std::move(t.alias), std::move(t.body), it->loop});
  }

  void replace_with(Tasklet<State> t) {
    auto it = data_->find(alias_);
    data_->require_fresh(t.alias, alias_);
    it->alias = t.alias;
    it->body = std::move(t.body);
    alias_ = std::move(t.alias);
  }

  void remove() {
    data_->nodes.erase(data_->find(alias_));
    data_->drop_empty_loops();
  }

  void set_body(std::function<void(State&)> body) { data_->find(alias_)->body = std::move(body); }

 private:
  std::shared_ptr<detail::ChainData<State>> data_;
  std::string alias_;
};

template <class State>
class Chain {
 public:
  Chain() : data_(std::make_shared<detail::ChainData<State>>()) {}
  Chain(Tasklet<State> t) : Chain() { append(std::move(t), 0); }  // NOLINT(google-explicit-constructor)
  Chain(const Chain& other) : Chain() { *data_ = *other.data_; }
  Chain(Chain&&) noexcept = default;
  Chain& operator=(const Chain& other) {
    if (this != &other) {
      data_ = std::make_shared<detail::ChainData<State>>();
      *data_ = *other.data_;
    }
    return *this;
  }
  Chain& operator=(Chain&&) noexcept = default;

  Chain& operator>>=(const Chain& other) {
    std::map<int, int> renumber;
    for (const auto& n : other.data_->nodes) {
      data_->require_fresh(n.alias);
      int loop = 0;
      if (n.loop != 0) {
        auto [it, fresh] = renumber.try_emplace(n.loop, data_->next_loop);
        if (fresh) {
          ++data_->next_loop;
          data_->loops[it->second] = other.data_->loops.at(n.loop);
        }
        loop = it->second;
      }
      data_->nodes.push_back({n.alias, n.body, loop});
    }
    return *this;
  }

  friend Chain operator>>(Chain a, const Chain& b) {
    a >>= b;
    return a;
  }

  static Chain loop(std::function<bool(State&)> exit_when, const Chain& span) {
    Chain out;
    const int id = out.data_->next_loop++;
    out.data_->loops[id] = std::move(exit_when);
    for (const auto& n : span.data_->nodes) {
      if (n.loop != 0) throw NestedLoop("loops cannot be nested (tasklet '" + n.alias + "')");
      out.data_->nodes.push_back({n.alias, n.body, id});
    }
    return out;
  }

  TaskletRef<State> get_tasklet(const std::string& alias) {
    data_->find(alias);
    return TaskletRef<State>(data_, alias);
  }

  bool contains(const std::string& alias) const {
    for (const auto& n : data_->nodes)
      if (n.alias == alias) return true;
    return false;
  }

  std::vector<std::string> aliases() const {
    std::vector<std::string> out;
    for (const auto& n : data_->nodes) out.push_back(n.alias);
    return out;
  }

  // Aliases with loop spans shown as "(a b c)" groups.
  std::string describe() const {
    std::string out;
    int open = 0;
    for (const auto& n : data_->nodes) {
      if (n.loop != open) {
        if (open != 0) out += ")";
        if (!out.empty()) out += " ";
        if (n.loop != 0) out += "(";
        open = n.loop;
      } else if (!out.empty()) {
        out += " ";
      }
      out += n.alias;
    }
    if (open != 0) out += ")";
    return out;
  }

  // Loop memberships as a list of spans of aliases.
  std::vector<std::vector<std::string>> loop_spans() const {
    std::vector<std::vector<std::string>> out;
    int open = 0;
    for (const auto& n : data_->nodes) {
      if (n.loop != 0 && n.loop != open) out.emplace_back();
      if (n.loop != 0) out.back().push_back(n.alias);
      open = n.loop;
    }
    return out;
  }

  std::size_t size() const { return data_->nodes.size(); }

  RunResult run(State& state, const RunOptions<State>& opts = {}) const {
    const std::vector<detail::Node<State>> nodes(data_->nodes.begin(), data_->nodes.end());
    std::size_t i = 0;
    while (i < nodes.size()) {
      const int loop = nodes[i].loop;
      std::size_t end = i + 1;
      while (loop != 0 && end < nodes.size() && nodes[end].loop == loop) ++end;
      int iteration = loop == 0 ? 0 : 1;
      while (true) {
        for (std::size_t k = i; k < end; ++k)
          if (!execute(nodes[k], iteration, state, opts)) return RunResult::Stopped;
        if (loop == 0 || data_->loops.at(loop)(state)) break;
        ++iteration;
      }
      i = end;
    }
    return RunResult::Completed;
  }

 private:
  void append(Tasklet<State> t, int loop) {
    data_->require_fresh(t.alias);
    data_->nodes.push_back({std::move(t.alias), std::move(t.body), loop});
  }

  static bool execute(const detail::Node<State>& node, int iteration, State& state, const RunOptions<State>& opts) {
    if (opts.stop_requested && opts.stop_requested()) return false;
    const auto start = std::chrono::steady_clock::now();
    try {
      if (node.body) node.body(state);
    } catch (const TaskFailure&) {
      throw;
    } catch (const std::exception& e) {
      throw TaskFailure(node.alias, e.what(), std::current_exception());
    } catch (...) {
      throw TaskFailure(node.alias, "unknown exception", std::current_exception());
    }
    if (opts.observer) {
      std::chrono::duration<double, std::milli> ms = std::chrono::steady_clock::now() - start;
      opts.observer({node.alias, iteration, ms.count()});
    }
    return true;
  }

  std::shared_ptr<detail::ChainData<State>> data_;
};

template <class State>
Chain<State> operator>>(Tasklet<State> a, Tasklet<State> b) {
  return Chain<State>(std::move(a)) >> Chain<State>(std::move(b));
}

template <class State>
Chain<State> operator>>(Tasklet<State> a, const Chain<State>& b) {
  return Chain<State>(std::move(a)) >> b;
}

template <class State>
Chain<State> operator>>(Chain<State> a, Tasklet<State> b) {
  return a >> Chain<State>(std::move(b));
}

template <class State>
Chain<State> loop(std::function<bool(State&)> exit_when, const Chain<State>& span) {
  return Chain<State>::loop(std::move(exit_when), span);
}

}  // namespace flame::tasklet
