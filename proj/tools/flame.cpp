// SPDX-License-Identifier: Apache-2.0
// `flame`: operator CLI, daemons (server, hub, deployer) and the worker entry.
#include <signal.h>

#include <CLI11.hpp>
#include <spdlog/fmt/fmt.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include "flame/channel/hub.hpp"
#include "flame/control/client.hpp"
#include "flame/control/server.hpp"
#include "flame/deploy/agent.hpp"
#include "flame/expansion/expand.hpp"
#include "flame/fl/dataset.hpp"
#include "flame/experiments/experiments.hpp"
#include "flame/tag/json.hpp"
#include "flame/tag/validation.hpp"
#include "flame/templates/templates.hpp"

namespace {

using namespace flame;
using nlohmann::ordered_json;

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kServer = 2;
constexpr int kAssertion = 3;

struct Globals {
  std::string api = std::getenv("FLAME_API") ? std::getenv("FLAME_API") : "http://127.0.0.1:10100";
  bool json = false;
  std::uint64_t seed = 0;
  std::string log_level;
};

class ValidationExit : public Error {
 public:
  explicit ValidationExit(const std::string& m) : Error("ValidationFailed", m) {}
};

void print(const Globals& g, const ordered_json& doc, const std::string& human) {
  if (g.json)
    std::cout << doc.dump(2) << std::endl;
  else
    std::cout << human << std::endl;
}

ordered_json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw tag::ParseError("cannot read " + path);
  try {
    return ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw tag::ParseError(path + ": " + e.what());
  }
}

// Blocks SIGINT and SIGTERM for every thread started afterwards; returns the
// set to sigwait on.
sigset_t block_stop_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

int wait_for_signal(const sigset_t& set) {
  int sig = 0;
  sigwait(&set, &sig);
  spdlog::info("received signal {}, shutting down", sig);
  return sig;
}

std::string task_table(const ordered_json& status) {
  std::string out = fmt::format("job {} ({}): {}", status.value("jobId", ""), status.value("name", ""),
                                status.value("state", ""));
  if (status.contains("error")) out += "\n  error: " + status.at("error").get<std::string>();
  for (const auto& [worker, t] : status.at("tasks").items()) {
    out += fmt::format("\n  {:<24} {:<10} {}", worker, t.value("status", ""), t.value("computeId", ""));
    if (t.value("unmanaged", false)) out += " (unmanaged)";
    if (t.contains("detail")) out += "  " + t.at("detail").get<std::string>();
  }
  return out;
}

std::vector<DatasetRecord> default_datasets(const tag::JobSpec& spec) {
  std::vector<DatasetRecord> out;
  std::size_t i = 0;
  for (const auto& g : spec.dataset_groups)
    for (const auto& id : g.dataset_ids)
      out.push_back({id, "local", fl::dataset_url({.seed = i++}), "cli"});
  return out;
}

// ---- experiments ----

int run_experiment(const Globals& g, const std::string& name, const std::string& artifacts_root, bool keep) {
  namespace ex = experiments;
  if (name != "hybrid-vs-classical" && name != "coordinated-backoff" && name != "expansion-overhead")
    throw ValidationExit("unknown experiment '" + name +
                         "' (hybrid-vs-classical, coordinated-backoff, expansion-overhead)");
  const auto dir = keep ? ex::artifact_dir(artifacts_root, name) : std::filesystem::path{};
  std::vector<ex::Check> checks;
  ordered_json summary;
  std::string line;
  if (name == "hybrid-vs-classical") {
    ex::HybridConfig cfg;
    cfg.seed = g.seed;
    const auto r = ex::run_hybrid_vs_classical(cfg, dir);
    checks = r.checks();
    summary = r.summary();
    line = fmt::format(
        "hybrid-vs-classical: speedup {:.2f}x (time to loss {:.3g}: classical {:.1f} ms in {} rounds, hybrid {:.1f} ms "
        "in {} rounds); aggregator-bound bytes {:.2f}x lower",
        r.speedup, r.target_loss, r.classical.time_to_target_ms, r.classical.rounds_to_target,
        r.hybrid.time_to_target_ms, r.hybrid.rounds_to_target, r.byte_factor);
  } else if (name == "coordinated-backoff") {
    ex::BackoffConfig cfg;
    cfg.seed = g.seed;
    const auto r = ex::run_coordinated_backoff(cfg, dir);
    checks = r.checks();
    summary = r.summary();
    std::string rounds;
    for (auto x : r.excluded_rounds) rounds += (rounds.empty() ? "" : ",") + std::to_string(x);
    line = fmt::format("coordinated-backoff: {} excluded rounds [{}]; mean round {:.2f} ms excluded vs {:.2f} ms with "
                       "straggler",
                       r.excluded_rounds.size(), rounds, r.mean_ms_excluded, r.mean_ms_straggling);
  } else {
    const auto r = ex::run_expansion_overhead({}, dir);
    checks = r.checks();
    summary = r.summary();
    line = "expansion-overhead:";
    for (const auto& p : r.points) line += fmt::format(" {} {}w {:.4f}s;", p.topology, p.workers, p.seconds);
    line += fmt::format(" linearity {:.2f}x, CO-FL/C-FL {:.2f}", r.linearity, r.coordinated_ratio);
  }
  if (keep) summary["artifacts"] = dir.string();
  std::string human = line;
  for (const auto& c : checks) human += fmt::format("\n  [{}] {}: {}", c.passed ? "pass" : "FAIL", c.name, c.detail);
  if (keep) human += "\n  artifacts: " + dir.string();
  print(g, summary, human);
  return ex::all_passed(checks) ? kOk : kAssertion;
}

}  // namespace

int main(int argc, char** argv) {
  Globals g;
  CLI::App app{"flame: topology-driven federated learning orchestration"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--api", g.api, "control-plane URL (env FLAME_API)");
  app.add_flag("--json", g.json, "machine-readable output");
  app.add_option("--seed", g.seed, "experiment seed");
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error");

  std::function<int()> action;
  auto client = [&] { return control::ApiClient::from_url(g.api); };

  // compute / dataset
  auto* compute = app.add_subcommand("compute", "compute registry")->require_subcommand(1);
  ComputeRecord crec;
  auto* creg = compute->add_subcommand("register", "register a compute");
  creg->add_option("--id", crec.compute_id)->required();
  creg->add_option("--realm", crec.realm)->required();
  creg->add_option("--endpoint", crec.endpoint);
  creg->add_option("--capacity", crec.capacity);
  creg->callback([&] {
    action = [&] {
      const auto id = client().register_compute(crec);
      print(g, {{"computeId", id}}, "registered compute " + id);
      return kOk;
    };
  });
  compute->add_subcommand("list", "list computes")->callback([&] {
    action = [&] {
      const auto doc = client().get("/computes");
      std::string human;
      for (const auto& c : doc)
        human += fmt::format("{:<16} {:<16} capacity {}\n", c.value("computeId", ""), c.value("realm", ""),
                             c.value("capacity", 0));
      print(g, doc, human.empty() ? "no computes" : human.substr(0, human.size() - 1));
      return kOk;
    };
  });

  auto* dataset = app.add_subcommand("dataset", "dataset registry")->require_subcommand(1);
  DatasetRecord drec;
  auto* dreg = dataset->add_subcommand("register", "register dataset metadata");
  dreg->add_option("--id", drec.dataset_id)->required();
  dreg->add_option("--realm", drec.realm)->required();
  dreg->add_option("--url", drec.url)->required();
  dreg->add_option("--owner", drec.owner);
  dreg->callback([&] {
    action = [&] {
      const auto id = client().register_dataset(drec);
      print(g, {{"datasetId", id}}, "registered dataset " + id);
      return kOk;
    };
  });

  // job
  auto* job = app.add_subcommand("job", "job lifecycle")->require_subcommand(1);
  std::string spec_file;
  std::string job_id;
  std::vector<std::string> unmanaged;
  bool wait_terminal = false;
  double wait_timeout = 600;
  auto* jcreate = job->add_subcommand("create", "submit a job spec");
  jcreate->add_option("spec", spec_file, "job spec JSON")->required();
  jcreate->callback([&] {
    action = [&] {
      const auto id = client().create_job(read_json_file(spec_file));
      print(g, {{"jobId", id}}, id);
      return kOk;
    };
  });
  auto* jstart = job->add_subcommand("start", "expand and deploy a job");
  jstart->add_option("job", job_id)->required();
  jstart->add_option("--unmanaged", unmanaged, "data-consumer workers left to participants");
  jstart->callback([&] {
    action = [&] {
      const auto doc = client().start_job(job_id, unmanaged);
      print(g, doc, task_table(doc));
      return kOk;
    };
  });
  auto* jstatus = job->add_subcommand("status", "job state and per-worker statuses");
  jstatus->add_option("job", job_id)->required();
  jstatus->add_flag("--wait", wait_terminal, "poll until the job is completed, failed or stopped");
  jstatus->add_option("--timeout", wait_timeout, "seconds to wait");
  jstatus->callback([&] {
    action = [&] {
      auto api = client();
      auto doc = api.job_status(job_id);
      const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(wait_timeout);
      while (wait_terminal && std::chrono::steady_clock::now() < deadline) {
        const auto state = control::job_state_from_string(doc.value("state", ""));
        if (state && control::is_terminal(*state)) break;
        std::this_thread::sleep_for(std::chrono::milliseconds(200));
        doc = api.job_status(job_id);
      }
      print(g, doc, task_table(doc));
      return kOk;
    };
  });
  auto* jstop = job->add_subcommand("stop", "revoke a job's workers");
  jstop->add_option("job", job_id)->required();
  jstop->callback([&] {
    action = [&] {
      const auto doc = client().stop_job(job_id);
      print(g, doc, task_table(doc));
      return kOk;
    };
  });
  job->add_subcommand("list", "list jobs")->callback([&] {
    action = [&] {
      const auto doc = client().get("/jobs");
      std::string human;
      for (const auto& j : doc)
        human += fmt::format("{}  {:<12} {}\n", j.value("jobId", ""), j.value("state", ""), j.value("name", ""));
      print(g, doc, human.empty() ? "no jobs" : human.substr(0, human.size() - 1));
      return kOk;
    };
  });

  // topology
  auto* topology = app.add_subcommand("topology", "local topology tools")->require_subcommand(1);
  std::string datasets_file;
  std::string computes_file;
  bool emit_dot = false;
  auto* texpand = topology->add_subcommand("expand", "expand a job spec into workers and edges");
  texpand->add_option("spec", spec_file)->required();
  texpand->add_option("--datasets", datasets_file, "JSON array of dataset records (default: one per listed id)");
  texpand->add_option("--computes", computes_file, "JSON array of compute records (default: one local compute)");
  texpand->add_flag("--emit-dot", emit_dot, "print Graphviz DOT");
  texpand->callback([&] {
    action = [&] {
      const auto spec = tag::job_spec_from_json(read_json_file(spec_file));
      const auto report = tag::pre_check(spec);
      if (!report.ok()) throw ValidationExit(report.summary());
      std::vector<DatasetRecord> datasets;
      if (datasets_file.empty())
        datasets = default_datasets(spec);
      else
        for (const auto& d : read_json_file(datasets_file)) datasets.push_back(control::dataset_from_json(d));
      std::vector<ComputeRecord> computes;
      if (computes_file.empty())
        computes.push_back({"local", "*", "", 1 << 30});
      else
        for (const auto& c : read_json_file(computes_file)) computes.push_back(control::compute_from_json(c));
      const auto topo = expansion::expand(spec, datasets, computes, spec.job_name);
      if (emit_dot) {
        std::cout << expansion::topology_to_dot(topo);
        return kOk;
      }
      const auto edges = topo.edges();
      std::string human = fmt::format("{} workers, {} edges", topo.workers.size(), edges.size());
      for (const auto& w : topo.workers) human += fmt::format("\n  {:<24} {:<20} {}", w.worker_id, w.role, w.compute_id);
      for (const auto& e : edges) human += fmt::format("\n  {} -- {} [{}]", e.a, e.b, e.channel);
      print(g, expansion::topology_to_json(topo, true), human);
      return kOk;
    };
  });

  // template
  auto* tmpl = app.add_subcommand("template", "built-in topology templates")->require_subcommand(1);
  std::string tmpl_a;
  std::string tmpl_b;
  tmpl->add_subcommand("list", "template names")->callback([&] {
    action = [&] {
      const auto names = templates::template_names();
      std::string human;
      for (const auto& n : names) human += (human.empty() ? "" : "\n") + n;
      print(g, names, human);
      return kOk;
    };
  });
  auto* tshow = tmpl->add_subcommand("show", "print a template as a job spec");
  tshow->add_option("name", tmpl_a)->required();
  tshow->callback([&] {
    action = [&] {
      const auto doc = tag::job_spec_to_json(templates::make_template(tmpl_a));
      std::cout << doc.dump(2) << std::endl;
      return kOk;
    };
  });
  auto* tdiff = tmpl->add_subcommand("diff", "changes between two templates");
  tdiff->add_option("from", tmpl_a)->required();
  tdiff->add_option("to", tmpl_b)->required();
  tdiff->callback([&] {
    action = [&] {
      const auto changes = templates::template_diff(templates::make_template(tmpl_a), templates::make_template(tmpl_b));
      ordered_json doc = ordered_json::array();
      std::string human;
      for (const auto& c : changes) {
        doc.push_back({{"row", c.row}, {"op", c.op}, {"what", c.what}, {"subject", c.subject}});
        human += (human.empty() ? "" : "\n") + c.row + ": " + c.str();
      }
      print(g, doc, human.empty() ? "no changes" : human);
      return kOk;
    };
  });

  // experiment
  auto* experiment = app.add_subcommand("experiment", "reproduction harness")->require_subcommand(1);
  std::string exp_name;
  std::string artifacts_root = "artifacts";
  bool no_artifacts = false;
  auto* erun = experiment->add_subcommand("run", "hybrid-vs-classical | coordinated-backoff | expansion-overhead");
  erun->add_option("name", exp_name)->required();
  erun->add_option("--artifacts", artifacts_root, "artifact root");
  erun->add_flag("--no-artifacts", no_artifacts, "write nothing");
  erun->callback([&] { action = [&] { return run_experiment(g, exp_name, artifacts_root, !no_artifacts); }; });

  // daemons
  std::string host = "127.0.0.1";
  int port = 10100;
  std::string store_dir = "flame-store";
  std::string artifact_root;
  std::string hub_host = "127.0.0.1";
  int hub_port = 0;
  int heartbeat_ms = 2000;
  int missed = 5;
  auto* server = app.add_subcommand("server", "run the control plane");
  server->add_option("--host", host);
  server->add_option("--port", port, "0 picks a free port");
  server->add_option("--store", store_dir, "journal and snapshot directory");
  server->add_option("--artifacts", artifact_root, "worker artifact root written into manifests");
  server->add_option("--hub-host", hub_host);
  server->add_option("--hub-port", hub_port, "external hub; 0 embeds one");
  server->add_option("--heartbeat-ms", heartbeat_ms);
  server->add_option("--missed-heartbeats", missed);
  server->callback([&] {
    action = [&] {
      const auto signals = block_stop_signals();
      std::unique_ptr<channel::HubServer> hub;
      if (hub_port == 0) {
        hub = std::make_unique<channel::HubServer>();
        hub_port = hub->port();
      }
      control::ControllerOptions co;
      co.store_dir = store_dir;
      co.broker_host = hub_host;
      co.broker_port = static_cast<std::uint16_t>(hub_port);
      if (!artifact_root.empty()) co.artifact_root = std::filesystem::absolute(artifact_root);
      co.heartbeat_period = std::chrono::milliseconds(heartbeat_ms);
      co.missed_heartbeats = missed;
      control::Controller controller(co);
      control::ServerOptions so;
      so.host = host;
      so.port = static_cast<std::uint16_t>(port);
      control::ApiServer api(controller, so);
      print(g, {{"api", fmt::format("http://{}:{}", host, api.port())}, {"hub", fmt::format("{}:{}", hub_host, hub_port)}},
            fmt::format("api http://{}:{} hub {}:{}", host, api.port(), hub_host, hub_port));
      wait_for_signal(signals);
      api.stop();
      return kOk;
    };
  });

  auto* hubcmd = app.add_subcommand("hub", "run a standalone message hub");
  int hub_listen = 0;
  hubcmd->add_option("--port", hub_listen, "0 picks a free port");
  hubcmd->callback([&] {
    action = [&] {
      const auto signals = block_stop_signals();
      channel::HubServer hub(static_cast<std::uint16_t>(hub_listen));
      print(g, {{"hub", fmt::format("127.0.0.1:{}", hub.port())}}, fmt::format("hub 127.0.0.1:{}", hub.port()));
      wait_for_signal(signals);
      hub.stop();
      return kOk;
    };
  });

  deploy::DeployerOptions dopts;
  std::string deployer_realm;
  int grace_ms = 5000;
  std::string work_root = "flame-work";
  auto* deployer = app.add_subcommand("deployer", "run the deployer of one compute");
  deployer->add_option("--id", dopts.deployer_id, "compute id served")->required();
  deployer->add_option("--capacity", dopts.capacity);
  deployer->add_option("--realm", deployer_realm, "register the compute with this realm first");
  deployer->add_option("--work-root", work_root);
  deployer->add_option("--heartbeat-ms", heartbeat_ms);
  deployer->add_option("--grace-ms", grace_ms);
  deployer->callback([&] {
    action = [&] {
      const auto signals = block_stop_signals();
      dopts.api_url = g.api;
      dopts.work_root = std::filesystem::absolute(work_root);
      dopts.worker_command = {deploy::self_executable().string(), "worker"};
      dopts.heartbeat_period = std::chrono::milliseconds(heartbeat_ms);
      dopts.grace = std::chrono::milliseconds(grace_ms);
      if (!deployer_realm.empty()) {
        try {
          client().register_compute({dopts.deployer_id, deployer_realm, "", dopts.capacity});
        } catch (const control::ApiError& e) {
          if (e.code() != "DuplicateCompute") throw;
        }
      }
      deploy::Deployer d(dopts);
      d.start();
      print(g, {{"deployer", dopts.deployer_id}, {"capacity", dopts.capacity}},
            fmt::format("deployer {} (capacity {}) subscribed to {}", dopts.deployer_id, dopts.capacity, g.api));
      wait_for_signal(signals);
      d.stop();
      return kOk;
    };
  });

  app.add_subcommand("worker", "run the worker described by FLAME_MANIFEST_PATH")->callback([&] {
    action = [] { return deploy::worker_main(); };
  });

  auto* agent = app.add_subcommand("agent", "participant-side agent")->require_subcommand(1);
  deploy::AgentOptions aopts;
  auto* ajoin = agent->add_subcommand("join", "claim an unmanaged slot of a running job and run it");
  ajoin->add_option("--job", aopts.job_id)->required();
  ajoin->add_option("--worker", aopts.worker_id)->required();
  ajoin->add_option("--work-root", work_root);
  ajoin->add_option("--heartbeat-ms", heartbeat_ms);
  ajoin->callback([&] {
    action = [&] {
      aopts.api_url = g.api;
      aopts.work_root = std::filesystem::absolute(work_root);
      aopts.worker_command = {deploy::self_executable().string(), "worker"};
      aopts.heartbeat_period = std::chrono::milliseconds(heartbeat_ms);
      auto a = deploy::join_unmanaged(aopts);
      a->start();
      a->wait();
      const auto phase = std::string(deploy::to_string(a->phase()));
      print(g, {{"workerId", aopts.worker_id}, {"phase", phase}, {"detail", a->detail()}},
            fmt::format("{}: {} ({})", aopts.worker_id, phase, a->detail()));
      return a->phase() == deploy::AgentPhase::Done ? kOk : kServer;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  auto logger = spdlog::stderr_color_mt("flame");
  spdlog::set_default_logger(logger);
  const bool daemon = app.got_subcommand("server") || app.got_subcommand("hub") || app.got_subcommand("deployer") ||
                      app.got_subcommand("agent");
  spdlog::set_level(g.log_level.empty() ? (daemon ? spdlog::level::info : spdlog::level::warn)
                                        : spdlog::level::from_str(g.log_level));

  try {
    return action ? action() : kOk;
  } catch (const control::ApiError& e) {
    if (!g.json) std::cerr << "error: " << e.what() << std::endl;
    std::cerr << e.body().dump() << std::endl;
    return e.status() == 400 || e.status() == 422 ? kValidation : kServer;
  } catch (const control::ValidationFailed& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kValidation;
  } catch (const tag::ParseError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kValidation;
  } catch (const tag::SchemaError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kValidation;
  } catch (const ValidationExit& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kValidation;
  } catch (const Error& e) {
    const bool input = e.code() == "UnknownTemplate" || e.code() == "NoComputeForRealm" ||
                       e.code() == "UnregisteredDataset" || e.code() == "MissingGroupAssociation" ||
                       e.code() == "BadUrl";
    std::cerr << "error: " << e.code() << ": " << e.what() << std::endl;
    return input ? kValidation : kServer;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kServer;
  }
}
