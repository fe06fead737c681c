// SPDX-License-Identifier: Apache-2.0
#include "flame/tag/validation.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace flame::tag {

bool ValidationReport::has(std::string_view code) const {
  return std::any_of(violations.begin(), violations.end(),
                     [&](const Violation& v) { return v.code == code; });
}

void ValidationReport::add(std::string code, std::string subject, std::string detail) {
  violations.push_back({std::move(code), std::move(subject), std::move(detail)});
}

std::string ValidationReport::summary() const {
  std::string out;
  for (const auto& v : violations) {
    if (!out.empty()) out += "; ";
    out += v.code + " (" + v.subject + "): " + v.detail;
  }
  return out;
}

bool is_valid_name(std::string_view name) {
  if (name.empty()) return false;
  return std::none_of(name.begin(), name.end(), [](char c) {
    return c == '/' || c == '+' || c == '#' || std::isspace(static_cast<unsigned char>(c));
  });
}

namespace {

void check_names(const JobSpec& spec, ValidationReport& report) {
  auto check = [&](const std::string& name, const std::string& what) {
    if (!is_valid_name(name))
      report.add(std::string(codes::kInvalidName), what, "invalid name '" + name + "'");
  };
  check(spec.job_name, "job");
  for (const auto& r : spec.roles) check(r.name, "role " + r.name);
  for (const auto& c : spec.channels) {
    check(c.name, "channel " + c.name);
    for (const auto& g : c.group_by) check(g, "channel " + c.name + " group");
  }
  for (const auto& g : spec.dataset_groups) check(g.label, "datasetGroup " + g.label);
}

void check_roles(const JobSpec& spec, ValidationReport& report) {
  std::set<std::string> seen;
  int consumers = 0;
  for (const auto& r : spec.roles) {
    if (!seen.insert(r.name).second)
      report.add(std::string(codes::kDuplicateRole), r.name, "role declared more than once");
    if (r.replica < 1)
      report.add(std::string(codes::kInvalidReplica), r.name,
                 "replica must be >= 1, got " + std::to_string(r.replica));
    if (r.is_data_consumer) {
      ++consumers;
      if (r.replica > 1)
        report.add(std::string(codes::kReplicaOnDataConsumer), r.name,
                   "replica > 1 is not allowed on a data consumer");
    } else if (r.group_association.empty()) {
      report.add(std::string(codes::kEmptyGroupAssociation), r.name,
                 "non-data-consumer role needs at least one groupAssociation entry");
    }

    const auto incident = spec.incident_channels(r.name);
    // A data consumer without entries binds each dataset group label directly.
    if (r.is_data_consumer && r.group_association.empty())
      for (const auto& g : spec.dataset_groups)
        for (const auto* ch : incident)
          if (!ch->admits_group(g.label))
            report.add(std::string(codes::kGroupNotInGroupBy), r.name,
                       "dataset group '" + g.label + "' is not in groupBy of '" + ch->name + "'");
    for (std::size_t i = 0; i < r.group_association.size(); ++i) {
      const auto& entry = r.group_association[i];
      const auto subject = r.name + ".groupAssociation[" + std::to_string(i) + "]";
      for (const auto& [ch_name, group] : entry) {
        const auto* ch = spec.find_channel(ch_name);
        if (ch == nullptr) {
          report.add(std::string(codes::kUnknownChannel), subject, "no channel named '" + ch_name + "'");
          continue;
        }
        if (!ch->is_incident(r.name)) {
          report.add(std::string(codes::kChannelNotIncident), subject,
                     "channel '" + ch_name + "' does not connect role '" + r.name + "'");
          continue;
        }
        if (!ch->admits_group(group))
          report.add(std::string(codes::kGroupNotInGroupBy), subject,
                     "group '" + group + "' is not in groupBy of '" + ch_name + "'");
      }
      for (const auto* ch : incident)
        if (!entry.contains(ch->name))
          report.add(std::string(codes::kAssociationIncomplete), subject,
                     "no group given for incident channel '" + ch->name + "'");
    }
  }
  if (consumers > 1)
    report.add(std::string(codes::kMultipleDataConsumers), spec.job_name,
               std::to_string(consumers) + " roles have isDataConsumer set");
  if (consumers == 0 && spec.dataset_count() > 0)
    report.add(std::string(codes::kNoDataConsumer), spec.job_name,
               "datasetGroups given but no role consumes data");
}

void check_channels(const JobSpec& spec, ValidationReport& report) {
  std::set<std::string> seen;
  for (const auto& c : spec.channels) {
    if (!seen.insert(c.name).second)
      report.add(std::string(codes::kDuplicateChannel), c.name, "channel declared more than once");
    for (const auto* end : {&c.pair.first, &c.pair.second})
      if (spec.find_role(*end) == nullptr)
        report.add(std::string(codes::kUnknownRole), c.name, "endpoint '" + *end + "' is not a role");
    for (const auto& [role, tags] : c.func_tags)
      if (!c.is_incident(role))
        report.add(std::string(codes::kFuncTagUnknownRole), c.name,
                   "funcTags key '" + role + "' is not an endpoint");
    if (c.group_by.empty())
      report.add(std::string(codes::kEmptyGroupBy), c.name, "groupBy must be non-empty");
    for (const auto& [pattern, bps] : c.backend.bandwidth_shape)
      if (!(bps > 0))
        report.add(std::string(codes::kInvalidBandwidth), c.name,
                   "bandwidth for '" + pattern + "' must be > 0");
  }
}

void check_datasets(const JobSpec& spec, ValidationReport& report) {
  std::set<std::string> seen;
  for (const auto& g : spec.dataset_groups)
    for (const auto& id : g.dataset_ids)
      if (!seen.insert(id).second)
        report.add(std::string(codes::kDuplicateDataset), id, "dataset listed in more than one group");
}

}  // namespace

ValidationReport pre_check(const JobSpec& spec) {
  ValidationReport report;
  check_names(spec, report);
  check_roles(spec, report);
  check_channels(spec, report);
  check_datasets(spec, report);
  return report;
}

}  // namespace flame::tag
