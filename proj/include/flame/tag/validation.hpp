// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "flame/tag/job_spec.hpp"

namespace flame::tag {

struct Violation {
  std::string code;
  std::string subject;
  std::string detail;

  bool operator==(const Violation&) const = default;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  bool has(std::string_view code) const;
  void add(std::string code, std::string subject, std::string detail);
  std::string summary() const;
};

namespace codes {
inline constexpr std::string_view kInvalidName = "INVALID_NAME";
inline constexpr std::string_view kDuplicateRole = "DUPLICATE_ROLE";
inline constexpr std::string_view kDuplicateChannel = "DUPLICATE_CHANNEL";
inline constexpr std::string_view kUnknownRole = "UNKNOWN_ROLE";
inline constexpr std::string_view kFuncTagUnknownRole = "FUNC_TAG_UNKNOWN_ROLE";
inline constexpr std::string_view kEmptyGroupBy = "EMPTY_GROUPBY";
inline constexpr std::string_view kInvalidBandwidth = "INVALID_BANDWIDTH";
inline constexpr std::string_view kInvalidReplica = "INVALID_REPLICA";
inline constexpr std::string_view kReplicaOnDataConsumer = "REPLICA_ON_DATA_CONSUMER";
inline constexpr std::string_view kMultipleDataConsumers = "MULTIPLE_DATA_CONSUMERS";
inline constexpr std::string_view kNoDataConsumer = "NO_DATA_CONSUMER";
inline constexpr std::string_view kEmptyGroupAssociation = "EMPTY_GROUP_ASSOCIATION";
inline constexpr std::string_view kUnknownChannel = "UNKNOWN_CHANNEL";
inline constexpr std::string_view kChannelNotIncident = "CHANNEL_NOT_INCIDENT";
inline constexpr std::string_view kAssociationIncomplete = "ASSOCIATION_INCOMPLETE";
inline constexpr std::string_view kGroupNotInGroupBy = "GROUP_NOT_IN_GROUPBY";
inline constexpr std::string_view kDuplicateDataset = "DUPLICATE_DATASET";
// post-check codes
inline constexpr std::string_view kDuplicateWorker = "DUPLICATE_WORKER";
inline constexpr std::string_view kWorkerCountMismatch = "WORKER_COUNT_MISMATCH";
inline constexpr std::string_view kBindingMismatch = "BINDING_MISMATCH";
inline constexpr std::string_view kDatasetRefMismatch = "DATASET_REF_MISMATCH";
inline constexpr std::string_view kEmptyChannelSide = "EMPTY_CHANNEL_SIDE";
}  // namespace codes

// Structural validation of a parsed job spec. Never throws; every
// violation is reported.
ValidationReport pre_check(const JobSpec& spec);

// Names used in topics and worker ids must be non-empty and free of
// '/', '+', '#' and whitespace.
bool is_valid_name(std::string_view name);

}  // namespace flame::tag
