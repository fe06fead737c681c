// SPDX-License-Identifier: Apache-2.0
#include "flame/templates/templates.hpp"

#include <algorithm>
#include <set>

#include "flame/fl/dataset.hpp"

namespace flame::templates {

using tag::BackendKind;
using tag::ChannelSpec;
using tag::JobSpec;
using tag::RoleSpec;

namespace {

std::map<std::string, double> default_hyperparams() {
  return {{"rounds", 3}, {"epochs", 1}, {"learningRate", 0.1}, {"modelDim", 8}};
}

void finish(JobSpec& spec, const TemplateParams& p) {
  spec.hyperparams = default_hyperparams();
  for (const auto& [k, v] : p.hyperparams) spec.hyperparams[k] = v;
  tag::fill_defaults(spec);
}

std::vector<tag::DatasetGroup> flat_groups(const Groups& groups) {
  tag::DatasetGroup all{std::string(tag::kDefaultGroup), {}};
  for (const auto& [label, ids] : groups) all.dataset_ids.insert(all.dataset_ids.end(), ids.begin(), ids.end());
  return {all};
}

std::vector<tag::DatasetGroup> keep_groups(const Groups& groups) {
  std::vector<tag::DatasetGroup> out;
  for (const auto& [label, ids] : groups) out.push_back({label, ids});
  return out;
}

RoleSpec role(std::string name, std::string program, bool consumer = false) {
  RoleSpec r;
  r.name = std::move(name);
  r.program = std::move(program);
  r.is_data_consumer = consumer;
  return r;
}

ChannelSpec channel(std::string name, std::string a, std::string b, std::vector<std::string> group_by = {"default"}) {
  ChannelSpec c;
  c.name = std::move(name);
  c.pair = {std::move(a), std::move(b)};
  c.group_by = std::move(group_by);
  return c;
}

void param_tags(ChannelSpec& c, const std::string& lower, const std::string& upper) {
  c.func_tags[lower] = {"fetch", "upload"};
  c.func_tags[upper] = {"distribute", "aggregate"};
}

JobSpec cfl(const TemplateParams& p) {
  JobSpec s;
  s.job_name = "c-fl";
  auto trainer = role("trainer", "trainer", true);
  trainer.group_association = {{{"param-channel", "default"}}};
  auto agg = role("aggregator", "aggregator");
  agg.group_association = {{{"param-channel", "default"}}};
  s.roles = {trainer, agg};
  auto c = channel("param-channel", "trainer", "aggregator");
  param_tags(c, "trainer", "aggregator");
  s.channels = {c};
  s.dataset_groups = flat_groups(p.groups);
  finish(s, p);
  return s;
}

JobSpec hfl(const TemplateParams& p) {
  JobSpec s;
  s.job_name = "h-fl";
  std::vector<std::string> labels;
  for (const auto& [label, ids] : p.groups) labels.push_back(label);
  auto trainer = role("trainer", "trainer", true);
  auto agg = role("aggregator", "aggregator");
  for (const auto& l : labels) {
    trainer.group_association.push_back({{"param-channel", l}});
    agg.group_association.push_back({{"param-channel", l}, {"agg-channel", "default"}});
  }
  auto global = role("global-aggregator", "global-aggregator");
  global.group_association = {{{"agg-channel", "default"}}};
  s.roles = {trainer, agg, global};
  auto param = channel("param-channel", "trainer", "aggregator", labels);
  param_tags(param, "trainer", "aggregator");
  auto up = channel("agg-channel", "aggregator", "global-aggregator");
  param_tags(up, "aggregator", "global-aggregator");
  s.channels = {param, up};
  s.dataset_groups = keep_groups(p.groups);
  finish(s, p);
  return s;
}

JobSpec cofl(const TemplateParams& p) {
  JobSpec s;
  s.job_name = "co-fl";
  auto trainer = role("trainer", "coord-trainer", true);
  trainer.group_association = {{{"param-channel", "default"}, {"trainer-coord-channel", "default"}}};
  auto agg = role("aggregator", "coord-aggregator");
  agg.replica = p.aggregators;
  agg.group_association = {
      {{"param-channel", "default"}, {"agg-channel", "default"}, {"agg-coord-channel", "default"}}};
  auto global = role("global-aggregator", "coord-global-aggregator");
  global.group_association = {{{"agg-channel", "default"}, {"global-coord-channel", "default"}}};
  auto coord = role("coordinator", "coordinator");
  coord.group_association = {
      {{"trainer-coord-channel", "default"}, {"agg-coord-channel", "default"}, {"global-coord-channel", "default"}}};
  s.roles = {trainer, agg, global, coord};
  auto param = channel("param-channel", "trainer", "aggregator");
  param_tags(param, "trainer", "aggregator");
  auto up = channel("agg-channel", "aggregator", "global-aggregator");
  param_tags(up, "aggregator", "global-aggregator");
  auto tc = channel("trainer-coord-channel", "trainer", "coordinator");
  auto ac = channel("agg-coord-channel", "aggregator", "coordinator");
  auto gc = channel("global-coord-channel", "global-aggregator", "coordinator");
  for (auto* c : {&tc, &ac, &gc}) {
    c->func_tags[c->pair.first] = {"coordinate"};
    c->func_tags[c->pair.second] = {"coordinate"};
  }
  s.channels = {param, up, tc, ac, gc};
  s.dataset_groups = flat_groups(p.groups);
  finish(s, p);
  return s;
}

JobSpec distributed(const TemplateParams& p) {
  JobSpec s;
  s.job_name = "distributed";
  auto trainer = role("trainer", "dist-trainer", true);
  trainer.group_association = {{{"param-channel", "default"}}};
  s.roles = {trainer};
  auto c = channel("param-channel", "trainer", "trainer");
  c.func_tags["trainer"] = {"ring_allreduce"};
  s.channels = {c};
  s.dataset_groups = flat_groups(p.groups);
  finish(s, p);
  return s;
}

JobSpec hybrid(const TemplateParams& p) {
  JobSpec s;
  s.job_name = "hybrid";
  std::vector<std::string> labels;
  for (const auto& [label, ids] : p.groups) labels.push_back(label);
  auto trainer = role("trainer", "hybrid-trainer", true);
  for (const auto& l : labels) trainer.group_association.push_back({{"param-channel", "default"}, {"dist-channel", l}});
  auto agg = role("aggregator", "aggregator");
  agg.group_association = {{{"param-channel", "default"}}};
  s.roles = {trainer, agg};
  auto param = channel("param-channel", "trainer", "aggregator");
  param_tags(param, "trainer", "aggregator");
  auto dist = channel("dist-channel", "trainer", "trainer", labels);
  dist.func_tags["trainer"] = {"ring_allreduce"};
  dist.backend.kind = BackendKind::PointToPoint;
  s.channels = {param, dist};
  s.dataset_groups = keep_groups(p.groups);
  finish(s, p);
  return s;
}

}  // namespace

std::vector<std::string> template_names() { return {"C-FL", "H-FL", "CO-FL", "distributed", "hybrid"}; }

JobSpec make_template(const std::string& name, const TemplateParams& params) {
  if (name == "C-FL") return cfl(params);
  if (name == "H-FL") return hfl(params);
  if (name == "CO-FL") return cofl(params);
  if (name == "distributed") return distributed(params);
  if (name == "hybrid") return hybrid(params);
  throw UnknownTemplate("no template named '" + name + "'");
}

std::vector<DatasetRecord> synthetic_datasets(const Groups& groups, const SyntheticOptions& opts) {
  std::vector<DatasetRecord> out;
  std::uint64_t index = 0;
  for (const auto& [label, ids] : groups) {
    for (const auto& id : ids) {
      fl::SyntheticSpec s;
      s.seed = opts.seed + index++;
      s.task = opts.task;
      s.n = opts.n;
      s.d = opts.d;
      s.noise = opts.noise;
      s.skew = opts.skew;
      out.push_back({id, opts.realm, fl::dataset_url(s), "synthetic"});
    }
  }
  return out;
}

Groups numbered_groups(std::size_t count, std::size_t groups) {
  groups = std::max<std::size_t>(groups, 1);
  Groups out;
  for (std::size_t g = 0; g < groups; ++g) out.push_back({groups == 1 ? "default" : "g" + std::to_string(g), {}});
  for (std::size_t i = 0; i < count; ++i) out[i * groups / std::max<std::size_t>(count, 1)].second.push_back("ds-" + std::to_string(i));
  return out;
}

std::string Change::str() const { return op + " " + what + (subject.empty() ? "" : " (" + subject + ")"); }

std::vector<Change> template_diff(const JobSpec& a, const JobSpec& b) {
  std::vector<Change> out;
  for (const auto& r : b.roles) {
    const auto* old = a.find_role(r.name);
    if (old == nullptr) {
      out.push_back({"Code", "+", r.name, ""});
      continue;
    }
    if (old->program != r.program) out.push_back({"Code", "Δ", "inheritance", r.name});
  }
  for (const auto& r : a.roles)
    if (b.find_role(r.name) == nullptr) out.push_back({"Code", "-", r.name, ""});

  for (const auto& r : b.roles) {
    const auto* old = a.find_role(r.name);
    if (old != nullptr && old->replica != r.replica)
      out.push_back({"TAG", r.replica > old->replica ? "+" : "-", "replica", r.name});
  }
  for (const auto& c : b.channels) {
    const auto* old = a.find_channel(c.name);
    if (old == nullptr) {
      out.push_back({"TAG", "+", "channel", c.name});
      continue;
    }
    if (old->pair != c.pair) out.push_back({"TAG", "Δ", "channel", c.name});
    if (old->group_by != c.group_by) out.push_back({"TAG", "Δ", "groupBy", c.name});
    if (old->backend.kind != c.backend.kind) out.push_back({"TAG", "Δ", "backend", c.name});
  }
  for (const auto& c : a.channels)
    if (b.find_channel(c.name) == nullptr) out.push_back({"TAG", "-", "channel", c.name});

  if (a.dataset_groups != b.dataset_groups) out.push_back({"Metadata", "Δ", "datasetGroups", ""});
  if (a.hyperparams != b.hyperparams) out.push_back({"Metadata", "Δ", "hyperparams", ""});
  return out;
}

}  // namespace flame::templates
