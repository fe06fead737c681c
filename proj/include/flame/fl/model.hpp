// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flame/common/error.hpp"

namespace flame::fl {

FLAME_DEFINE_ERROR(ShapeMismatch);
FLAME_DEFINE_ERROR(EmptyUpdateSet);
FLAME_DEFINE_ERROR(CorruptWeights);

struct ModelWeights {
  std::vector<double> values;
  std::vector<std::uint64_t> dims;

  static ModelWeights zeros(std::size_t n) { return {std::vector<double>(n, 0.0), {n}}; }
  std::size_t size() const { return values.size(); }
  bool same_shape(const ModelWeights& o) const { return dims == o.dims && values.size() == o.values.size(); }
  bool operator==(const ModelWeights&) const = default;
};

struct ModelUpdate {
  ModelWeights weights;
  std::uint64_t sample_count = 0;
  int round = 0;
  std::string sender;
};

// [u32 ndims][u64 dims...][f64 values...], all little-endian.
std::vector<std::uint8_t> serialize(const ModelWeights& w);
ModelWeights deserialize(std::span<const std::uint8_t> bytes);

// Sample-count weighted mean. Updates are summed in sender order so the
// result does not depend on arrival order.
ModelWeights fedavg_aggregate(std::span<const ModelUpdate> updates);

}  // namespace flame::fl
