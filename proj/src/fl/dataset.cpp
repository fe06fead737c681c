// SPDX-License-Identifier: Apache-2.0
#include "flame/fl/dataset.hpp"

#include <charconv>
#include <random>
#include <sstream>

namespace flame::fl {

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw BadDatasetUrl("bad value '" + text + "' for '" + key + "'");
  return v;
}

}  // namespace

SyntheticSpec parse_dataset_url(const std::string& url, std::size_t default_d) {
  const std::string scheme = "synthetic:";
  if (url.rfind(scheme, 0) != 0) throw BadDatasetUrl("unsupported dataset url '" + url + "'");
  SyntheticSpec spec;
  spec.d = default_d;
  auto query = url.substr(scheme.size());
  if (!query.empty() && query[0] == '?') query.erase(0, 1);
  std::stringstream ss(query);
  std::string pair;
  while (std::getline(ss, pair, '&')) {
    if (pair.empty()) continue;
    auto eq = pair.find('=');
    if (eq == std::string::npos) throw BadDatasetUrl("missing '=' in '" + pair + "'");
    auto key = pair.substr(0, eq);
    auto value = pair.substr(eq + 1);
    if (key == "seed") {
      // Non-numeric seeds (e.g. dataset ids) are hashed.
      try {
        spec.seed = parse_number<std::uint64_t>(key, value);
      } catch (const BadDatasetUrl&) {
        spec.seed = std::hash<std::string>{}(value);
      }
    } else if (key == "task") {
      spec.task = parse_number<std::uint64_t>(key, value);
    } else if (key == "n") {
      spec.n = parse_number<std::size_t>(key, value);
    } else if (key == "d") {
      spec.d = parse_number<std::size_t>(key, value);
    } else if (key == "noise") {
      spec.noise = parse_number<double>(key, value);
    } else if (key == "skew") {
      spec.skew = parse_number<double>(key, value);
    } else {
      throw BadDatasetUrl("unknown key '" + key + "'");
    }
  }
  if (spec.n == 0 || spec.d == 0) throw BadDatasetUrl("n and d must be positive in '" + url + "'");
  return spec;
}

std::string dataset_url(const SyntheticSpec& s) {
  std::ostringstream out;
  out.precision(17);
  out << "synthetic:?seed=" << s.seed << "&task=" << s.task << "&n=" << s.n << "&d=" << s.d << "&noise=" << s.noise
      << "&skew=" << s.skew;
  return out.str();
}

std::vector<double> task_weights(std::uint64_t task, std::size_t d) {
  std::mt19937_64 rng(0x9e3779b97f4a7c15ULL ^ task);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> w(d);
  for (auto& v : w) v = normal(rng);
  return w;
}

SyntheticDataset generate(const SyntheticSpec& spec) {
  SyntheticDataset ds;
  ds.spec = spec;
  const auto w = task_weights(spec.task, spec.d);
  std::mt19937_64 rng(spec.seed * 0x2545f4914f6cdd1dULL + 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> shift(spec.d);
  for (auto& s : shift) s = spec.skew * normal(rng);
  ds.features.resize(spec.n * spec.d);
  ds.labels.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    double y = 0;
    for (std::size_t j = 0; j < spec.d; ++j) {
      const double x = shift[j] + normal(rng);
      ds.features[i * spec.d + j] = x;
      y += x * w[j];
    }
    ds.labels[i] = y + spec.noise * normal(rng);
  }
  return ds;
}

}  // namespace flame::fl
