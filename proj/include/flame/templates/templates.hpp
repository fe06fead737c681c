// SPDX-License-Identifier: Apache-2.0
// Built-in topology templates and a structural diff between job specs.
#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "flame/common/error.hpp"
#include "flame/common/resources.hpp"
#include "flame/tag/job_spec.hpp"

namespace flame::templates {

FLAME_DEFINE_ERROR(UnknownTemplate);

using Groups = std::vector<std::pair<std::string, std::vector<std::string>>>;

struct TemplateParams {
  // Dataset groups. Flat templates (C-FL, CO-FL, distributed) merge them
  // into one "default" group.
  Groups groups{{"west", {"A", "B"}}, {"east", {"C", "D"}}};
  int aggregators = 2;  // CO-FL aggregator replicas
  std::map<std::string, double> hyperparams;
};

// "C-FL", "H-FL", "CO-FL", "distributed", "hybrid"
std::vector<std::string> template_names();
tag::JobSpec make_template(const std::string& name, const TemplateParams& params = {});

struct SyntheticOptions {
  std::size_t n = 100;
  std::size_t d = 8;
  double noise = 0.1;
  double skew = 0.0;
  std::uint64_t task = 0;
  std::uint64_t seed = 0;  // added to each dataset's index
  std::string realm = "*";
};

// One record per dataset id, each with its own synthetic:? locator.
std::vector<DatasetRecord> synthetic_datasets(const Groups& groups, const SyntheticOptions& opts = {});
// `count` datasets "ds-0".."ds-<count-1>" split into `groups` groups "g0"..
Groups numbered_groups(std::size_t count, std::size_t groups = 1);

struct Change {
  std::string row;  // "Code", "TAG" or "Metadata"
  std::string op;   // "+", "-" or "Δ"
  std::string what;
  std::string subject;

  std::string str() const;
  bool operator==(const Change&) const = default;
};

std::vector<Change> template_diff(const tag::JobSpec& from, const tag::JobSpec& to);

}  // namespace flame::templates
