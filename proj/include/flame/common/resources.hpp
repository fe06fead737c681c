// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

namespace flame {

// A registered compute cluster. Realms are '/'-separated hierarchical labels
// ("us/west"); the realm "*" admits everything.
struct ComputeRecord {
  std::string compute_id;
  std::string realm;
  std::string endpoint;
  int capacity = 1;

  bool operator==(const ComputeRecord&) const = default;
};

// Metadata of a registered dataset. Only the locator is stored, never data.
struct DatasetRecord {
  std::string dataset_id;
  std::string realm;
  std::string url;
  std::string owner;

  bool operator==(const DatasetRecord&) const = default;
};

}  // namespace flame
