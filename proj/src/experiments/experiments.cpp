// SPDX-License-Identifier: Apache-2.0
#include "flame/experiments/experiments.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <chrono>
#include <ctime>
#include <fstream>
#include <numeric>

#include <spdlog/fmt/fmt.h>

#include "flame/expansion/expand.hpp"
#include "flame/fl/local_runner.hpp"
#include "flame/fl/train.hpp"
#include "flame/templates/templates.hpp"

namespace flame::experiments {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

fs::path scratch_dir(const std::string& tag) {
  static int counter = 0;
  return fs::temp_directory_path() /
         ("flame-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
}

std::vector<double> read_checkpoint(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  return fl::deserialize(bytes).values;
}

double federation_loss(const std::vector<fl::SyntheticDataset>& data, const fl::ModelWeights& w) {
  double sum = 0;
  double n = 0;
  for (const auto& ds : data) {
    sum += static_cast<double>(ds.n()) * fl::loss(w, ds);
    n += static_cast<double>(ds.n());
  }
  return sum / n;
}

TopologyRun run_topology(const tag::JobSpec& spec, const std::vector<DatasetRecord>& datasets,
                         const std::vector<fl::SyntheticDataset>& data, const fs::path& dir) {
  fl::LocalRunOptions opts;
  opts.job_id = spec.job_name;
  opts.artifact_dir = dir;
  auto result = fl::run_local_job(spec, datasets, {}, opts);
  const auto* holder = result.holder();
  if (holder == nullptr) throw Error("ExperimentError", spec.job_name + " produced no global model");

  TopologyRun run;
  run.initial_loss = federation_loss(data, fl::ModelWeights::zeros(data.front().d()));
  for (const auto& r : holder->rounds) {
    run.round_ms.push_back(r.duration_ms);
    run.inbound_bytes.push_back(r.inbound_bytes);
    fl::ModelWeights w{read_checkpoint(dir / "checkpoints" / ("round-" + std::to_string(r.round) + ".bin")),
                       {data.front().d()}};
    run.loss.push_back(federation_loss(data, w));
  }
  run.final_weights = result.final_weights->values;
  std::vector<double> inbound(run.inbound_bytes.begin(), run.inbound_bytes.end());
  run.mean_inbound_bytes = mean(inbound);
  return run;
}

void mark_target(TopologyRun& run, double target) {
  double elapsed = 0;
  for (std::size_t i = 0; i < run.loss.size(); ++i) {
    elapsed += run.round_ms[i];
    if (run.loss[i] <= target) {
      run.rounds_to_target = static_cast<int>(i) + 1;
      run.time_to_target_ms = elapsed;
      return;
    }
  }
}

ordered_json run_json(const TopologyRun& r) {
  return {{"rounds_to_target", r.rounds_to_target}, {"time_to_target_ms", r.time_to_target_ms},
          {"mean_inbound_bytes", r.mean_inbound_bytes}, {"round_ms", r.round_ms},
          {"loss", r.loss}, {"initial_loss", r.initial_loss}};
}

ordered_json checks_json(const std::vector<Check>& checks) {
  ordered_json out = ordered_json::array();
  for (const auto& c : checks) out.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  return out;
}

}  // namespace

bool all_passed(const std::vector<Check>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

fs::path artifact_dir(const fs::path& root, const std::string& experiment) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  auto dir = root / experiment / stamp;
  for (int i = 1; fs::exists(dir); ++i) dir = root / experiment / (std::string(stamp) + "-" + std::to_string(i));
  fs::create_directories(dir);
  return dir;
}

void write_json(const fs::path& file, const ordered_json& doc) {
  std::ofstream out(file);
  out << doc.dump(2) << "\n";
}

// ---- hybrid vs classical ----

ordered_json HybridResult::summary() const {
  return {{"experiment", "hybrid-vs-classical"},
          {"trainers", config.trainers},
          {"groups", config.groups},
          {"straggler", config.straggler},
          {"straggler_bps", config.straggler_bps},
          {"p2p_bps", config.p2p_bps},
          {"model_dim", config.d},
          {"seed", config.seed},
          {"target_loss", target_loss},
          {"speedup", speedup},
          {"byte_factor", byte_factor},
          {"expected_byte_factor", expected_byte_factor},
          {"classical", run_json(classical)},
          {"hybrid", run_json(hybrid)},
          {"checks", checks_json(checks())}};
}

std::vector<Check> HybridResult::checks() const {
  const bool both = classical.time_to_target_ms > 0 && hybrid.time_to_target_ms > 0;
  const double rel = expected_byte_factor > 0 ? std::abs(byte_factor / expected_byte_factor - 1.0) : 1.0;
  return {
      {"hybrid reaches target faster", both && hybrid.time_to_target_ms < classical.time_to_target_ms,
       fmt::format("classical {:.1f} ms, hybrid {:.1f} ms", classical.time_to_target_ms, hybrid.time_to_target_ms)},
      {"speedup >= 1.5", both && speedup >= 1.5, fmt::format("speedup {:.2f}x", speedup)},
      {"aggregator bytes reduced by group factor", rel <= 0.10,
       fmt::format("{:.3f}x measured, {:.3f}x expected", byte_factor, expected_byte_factor)},
  };
}

HybridResult run_hybrid_vs_classical(const HybridConfig& cfg, const fs::path& artifacts) {
  HybridResult out;
  out.config = cfg;
  const auto groups = templates::numbered_groups(static_cast<std::size_t>(cfg.trainers),
                                                 static_cast<std::size_t>(cfg.groups));
  templates::SyntheticOptions so;
  so.n = cfg.n;
  so.d = cfg.d;
  so.seed = cfg.seed;
  so.task = cfg.seed;
  const auto datasets = templates::synthetic_datasets(groups, so);
  std::vector<fl::SyntheticDataset> data;
  for (const auto& d : datasets) data.push_back(fl::generate(fl::parse_dataset_url(d.url)));

  templates::TemplateParams p;
  p.groups = groups;
  p.hyperparams = {{"rounds", cfg.rounds}, {"epochs", 1}, {"learningRate", cfg.lr},
                   {"modelDim", static_cast<double>(cfg.d)}};
  auto classical = templates::make_template("C-FL", p);
  classical.job_name = "classical";
  classical.channels[0].backend.bandwidth_shape = {{cfg.straggler, cfg.straggler_bps}};
  auto hybrid = templates::make_template("hybrid", p);
  hybrid.job_name = "hybrid";
  for (auto& c : hybrid.channels) {
    if (c.name == "param-channel") c.backend.bandwidth_shape = {{cfg.straggler, cfg.straggler_bps}};
    if (c.name == "dist-channel") c.backend.bandwidth_shape = {{"*", cfg.p2p_bps}};
  }

  const bool keep = !artifacts.empty();
  const auto base = keep ? artifacts : scratch_dir("hybrid");
  out.classical = run_topology(classical, datasets, data, base / "classical");
  out.hybrid = run_topology(hybrid, datasets, data, base / "hybrid");
  out.target_loss = cfg.target_fraction * out.classical.initial_loss;
  mark_target(out.classical, out.target_loss);
  mark_target(out.hybrid, out.target_loss);
  if (out.classical.time_to_target_ms > 0 && out.hybrid.time_to_target_ms > 0)
    out.speedup = out.classical.time_to_target_ms / out.hybrid.time_to_target_ms;
  if (out.hybrid.mean_inbound_bytes > 0)
    out.byte_factor = out.classical.mean_inbound_bytes / out.hybrid.mean_inbound_bytes;
  out.expected_byte_factor = static_cast<double>(cfg.trainers) / cfg.groups;
  if (keep)
    write_json(base / "summary.json", out.summary());
  else
    fs::remove_all(base);
  return out;
}

// ---- coordinated backoff ----

ordered_json BackoffResult::summary() const {
  ordered_json enabled_json = ordered_json::array();
  for (const auto& e : enabled) enabled_json.push_back(std::vector<std::string>(e.begin(), e.end()));
  return {{"experiment", "coordinated-backoff"},
          {"trainers", config.trainers},
          {"aggregators", config.aggregators},
          {"straggler", config.straggler},
          {"delay_ms", config.delay_ms},
          {"delay_from", config.delay_from},
          {"rounds", config.rounds},
          {"seed", config.seed},
          {"excluded_rounds", excluded_rounds},
          {"expected_excluded_rounds", expected_exclusions(config.delay_from, config.rounds)},
          {"mean_ms_excluded", mean_ms_excluded},
          {"mean_ms_straggling", mean_ms_straggling},
          {"round_ms", round_ms},
          {"enabled", enabled_json},
          {"checks", checks_json(checks())}};
}

std::vector<Check> BackoffResult::checks() const {
  const auto expected = expected_exclusions(config.delay_from, config.rounds);
  return {
      {"exclusion schedule", excluded_rounds == expected,
       fmt::format("{} excluded rounds, {} expected", excluded_rounds.size(), expected.size())},
      {"excluded rounds are faster", !excluded_rounds.empty() && mean_ms_excluded < mean_ms_straggling,
       fmt::format("{:.2f} ms excluded vs {:.2f} ms straggling", mean_ms_excluded, mean_ms_straggling)},
  };
}

std::vector<int> expected_exclusions(int delay_from, int rounds, int detect_after, int cap) {
  std::vector<int> out;
  int start = delay_from + detect_after;  // first excluded round
  int length = 1;
  while (start <= rounds) {
    for (int r = start; r < start + length && r <= rounds; ++r) out.push_back(r);
    start += length + 1;  // one probe round in between
    length = std::min(length * 2, cap);
  }
  return out;
}

BackoffResult run_coordinated_backoff(const BackoffConfig& cfg, const fs::path& artifacts) {
  BackoffResult out;
  out.config = cfg;
  templates::TemplateParams p;
  p.groups = templates::numbered_groups(static_cast<std::size_t>(cfg.trainers));
  p.aggregators = cfg.aggregators;
  p.hyperparams = {{"rounds", cfg.rounds},
                   {"delay." + cfg.straggler + ".ms", cfg.delay_ms},
                   {"delay." + cfg.straggler + ".from", cfg.delay_from}};
  auto spec = templates::make_template("CO-FL", p);
  templates::SyntheticOptions so;
  so.seed = cfg.seed;
  so.task = cfg.seed;
  auto datasets = templates::synthetic_datasets(p.groups, so);

  fl::LocalRunOptions opts;
  opts.job_id = "coordinated";
  if (!artifacts.empty()) opts.artifact_dir = artifacts;
  auto result = fl::run_local_job(spec, datasets, {}, opts);
  out.enabled = result.workers.at("coordinator-0").enabled_per_round;
  for (const auto& r : result.workers.at("global-aggregator-0").rounds) out.round_ms.push_back(r.duration_ms);

  std::vector<double> excluded_ms;
  std::vector<double> straggling_ms;
  for (std::size_t i = 0; i < out.enabled.size(); ++i) {
    const int round = static_cast<int>(i) + 1;
    const double ms = i < out.round_ms.size() ? out.round_ms[i] : 0;
    if (!out.enabled[i].contains(cfg.straggler)) {
      out.excluded_rounds.push_back(round);
      excluded_ms.push_back(ms);
    } else if (round >= cfg.delay_from) {
      straggling_ms.push_back(ms);
    }
  }
  out.mean_ms_excluded = mean(excluded_ms);
  out.mean_ms_straggling = mean(straggling_ms);
  if (!artifacts.empty()) write_json(artifacts / "summary.json", out.summary());
  return out;
}

// ---- expansion overhead ----

ordered_json ExpansionResult::summary() const {
  ordered_json pts = ordered_json::array();
  for (const auto& p : points) pts.push_back({{"topology", p.topology}, {"workers", p.workers}, {"seconds", p.seconds}});
  return {{"experiment", "expansion-overhead"},
          {"points", pts},
          {"linearity", linearity},
          {"coordinated_ratio", coordinated_ratio},
          {"checks", checks_json(checks())}};
}

std::vector<Check> ExpansionResult::checks() const {
  double largest = -1;
  std::size_t largest_workers = 0;
  for (const auto& p : points)
    if (p.topology == "C-FL" && p.workers >= largest_workers) {
      largest_workers = p.workers;
      largest = p.seconds;
    }
  return {
      {"largest C-FL expansion <= 60 s", largest >= 0 && largest <= 60.0,
       fmt::format("{} workers in {:.3f} s", largest_workers, largest)},
      {"linear within 2x", linearity > 0 && linearity <= 2.0, fmt::format("per-worker spread {:.2f}x", linearity)},
      {"CO-FL within 1.5x of C-FL", coordinated_ratio > 0 && coordinated_ratio <= 1.5,
       fmt::format("ratio {:.2f}", coordinated_ratio)},
  };
}

ExpansionResult run_expansion_overhead(const ExpansionConfig& cfg, const fs::path& artifacts) {
  ExpansionResult out;
  std::vector<ComputeRecord> computes{{"local", "*", "", 1 << 30}};
  auto time_expand = [&](const std::string& name, std::size_t datasets, int replicas) {
    templates::TemplateParams p;
    p.groups = templates::numbered_groups(datasets);
    p.aggregators = replicas;
    const auto spec = templates::make_template(name, p);
    const auto records = templates::synthetic_datasets(p.groups);
    ExpansionPoint pt{name, 0, 1e300};
    for (int i = 0; i < std::max(cfg.repeats, 1); ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto topo = expansion::expand(spec, records, computes, "bench");
      pt.seconds = std::min(pt.seconds, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      pt.workers = topo.workers.size();
    }
    return pt;
  };

  std::vector<double> per_worker;
  for (auto size : cfg.sizes) {
    // C-FL: one aggregator plus size-1 trainers.
    auto pt = time_expand("C-FL", size - 1, 1);
    per_worker.push_back(pt.seconds / static_cast<double>(pt.workers));
    out.points.push_back(pt);
  }
  out.linearity = *std::max_element(per_worker.begin(), per_worker.end()) /
                  *std::min_element(per_worker.begin(), per_worker.end());

  const auto largest = *std::max_element(cfg.sizes.begin(), cfg.sizes.end());
  const auto extra = static_cast<std::size_t>(cfg.coordinated_replicas) + 2;
  if (largest > extra) {
    auto co = time_expand("CO-FL", largest - extra, cfg.coordinated_replicas);
    out.points.push_back(co);
    for (const auto& p : out.points)
      if (p.topology == "C-FL" && p.workers == largest) out.coordinated_ratio = co.seconds / p.seconds;
  }
  if (!artifacts.empty()) write_json(artifacts / "summary.json", out.summary());
  return out;
}

}  // namespace flame::experiments
