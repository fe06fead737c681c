// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flame/common/error.hpp"
#include "flame/common/resources.hpp"
#include "flame/expansion/topology.hpp"
#include "flame/tag/job_spec.hpp"
#include "flame/tag/validation.hpp"

namespace flame::expansion {

FLAME_DEFINE_ERROR(NoComputeForRealm);
FLAME_DEFINE_ERROR(UnregisteredDataset);
FLAME_DEFINE_ERROR(MissingGroupAssociation);

class ReportError : public Error {
 public:
  ReportError(std::string code, tag::ValidationReport report)
      : Error(std::move(code), report.summary()), report_(std::move(report)) {}
  const tag::ValidationReport& report() const { return report_; }

 private:
  tag::ValidationReport report_;
};

class PreCheckFailed : public ReportError {
 public:
  explicit PreCheckFailed(tag::ValidationReport r) : ReportError("PreCheckFailed", std::move(r)) {}
};

class PostCheckFailed : public ReportError {
 public:
  explicit PostCheckFailed(tag::ValidationReport r) : ReportError("PostCheckFailed", std::move(r)) {}
};

// Chooses computes for workers. The most specific admitting realm wins;
// equally specific candidates are used round-robin in compute_id order.
class ComputePlacer {
 public:
  explicit ComputePlacer(std::span<const ComputeRecord> computes);

  // `realm` is the realm the compute has to admit; nullopt means any.
  // `subject` names the dataset or worker in the NoComputeForRealm error.
  std::string decide(const std::optional<std::string>& realm, const std::string& subject);

  std::vector<std::string> notes() const;

 private:
  std::vector<ComputeRecord> computes_;  // sorted by compute_id
  std::map<std::string, std::size_t> cursor_;
  std::map<std::string, std::size_t> shared_;  // candidate set -> workers placed on it
};

// Lookup table of registered datasets.
class DatasetIndex {
 public:
  explicit DatasetIndex(std::span<const DatasetRecord> datasets);
  const DatasetRecord& at(const std::string& dataset_id) const;  // throws UnregisteredDataset

 private:
  std::map<std::string, const DatasetRecord*> by_id_;
};

// One worker per dataset; compute from the dataset's realm, groups from
// the groupAssociation entry naming the dataset's group.
std::vector<WorkerConfig> build_workers_data_consumer(const tag::RoleSpec& role,
                                                      const tag::JobSpec& spec,
                                                      const DatasetIndex& datasets,
                                                      ComputePlacer& placer);

// replica copies per groupAssociation entry; compute_id left empty (placed
// later, once peer realms are known).
std::vector<WorkerConfig> build_workers_general(const tag::RoleSpec& role);

tag::ValidationReport post_check(const PhysicalTopology& topology, const tag::JobSpec& spec);

PhysicalTopology expand(const tag::JobSpec& spec, std::span<const DatasetRecord> datasets,
                        std::span<const ComputeRecord> computes, const std::string& job_id = "");

}  // namespace flame::expansion
