// SPDX-License-Identifier: Apache-2.0
// Synthetic linear-regression data: labels = x . w_task + noise. Datasets
// sharing a task seed share w_task; `skew` shifts each dataset's feature
// means for non-IID partitions.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flame/common/error.hpp"

namespace flame::fl {

FLAME_DEFINE_ERROR(BadDatasetUrl);

struct SyntheticSpec {
  std::uint64_t seed = 0;
  std::uint64_t task = 0;
  std::size_t n = 100;
  std::size_t d = 8;
  double noise = 0.1;
  double skew = 0.0;

  bool operator==(const SyntheticSpec&) const = default;
};

// "synthetic:?seed=3&n=200&d=16&noise=0.1&skew=0.5&task=1". Keys are
// optional; `default_d` fills in a missing d.
SyntheticSpec parse_dataset_url(const std::string& url, std::size_t default_d = 8);
std::string dataset_url(const SyntheticSpec& spec);

struct SyntheticDataset {
  SyntheticSpec spec;
  std::vector<double> features;  // n x d, row-major
  std::vector<double> labels;

  std::size_t n() const { return labels.size(); }
  std::size_t d() const { return spec.d; }
  const double* row(std::size_t i) const { return features.data() + i * spec.d; }
};

std::vector<double> task_weights(std::uint64_t task, std::size_t d);
SyntheticDataset generate(const SyntheticSpec& spec);

}  // namespace flame::fl
