// SPDX-License-Identifier: Apache-2.0
#include "flame/fl/model.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <numeric>

namespace flame::fl {

namespace {

static_assert(std::endian::native == std::endian::little, "weight encoding assumes a little-endian host");

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <class T>
T take(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw CorruptWeights("weights buffer truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::vector<std::uint8_t> serialize(const ModelWeights& w) {
  std::vector<std::uint8_t> out;
  out.reserve(4 + 8 * w.dims.size() + 8 * w.values.size());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(w.dims.size()));
  for (auto d : w.dims) put<std::uint64_t>(out, d);
  const auto* raw = reinterpret_cast<const std::uint8_t*>(w.values.data());
  out.insert(out.end(), raw, raw + w.values.size() * sizeof(double));
  return out;
}

ModelWeights deserialize(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  ModelWeights w;
  auto ndims = take<std::uint32_t>(bytes, pos);
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < ndims; ++i) {
    w.dims.push_back(take<std::uint64_t>(bytes, pos));
    count *= w.dims.back();
  }
  if (ndims == 0) count = 0;
  if (bytes.size() - pos != count * sizeof(double))
    throw CorruptWeights("expected " + std::to_string(count) + " values, buffer holds " +
                         std::to_string((bytes.size() - pos) / sizeof(double)));
  w.values.resize(count);
  std::memcpy(w.values.data(), bytes.data() + pos, count * sizeof(double));
  return w;
}

ModelWeights fedavg_aggregate(std::span<const ModelUpdate> updates) {
  if (updates.empty()) throw EmptyUpdateSet("no model updates to aggregate");
  std::vector<const ModelUpdate*> order;
  for (const auto& u : updates) {
    if (!u.weights.same_shape(updates.front().weights))
      throw ShapeMismatch("update from '" + u.sender + "' has a different shape");
    order.push_back(&u);
  }
  std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->sender < b->sender; });
  double total = 0;
  for (const auto* u : order) total += static_cast<double>(u->sample_count);
  ModelWeights out{std::vector<double>(updates.front().weights.size(), 0.0), updates.front().weights.dims};
  if (total == 0) throw EmptyUpdateSet("all updates carry zero samples");
  for (const auto* u : order) {
    const double share = static_cast<double>(u->sample_count) / total;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += share * u->weights.values[i];
  }
  return out;
}

}  // namespace flame::fl
