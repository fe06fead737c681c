// SPDX-License-Identifier: Apache-2.0
#include "flame/fl/train.hpp"

#include <algorithm>
#include <cmath>

namespace flame::fl {

namespace {

void check_dims(const ModelWeights& w, const SyntheticDataset& ds) {
  if (w.size() != ds.d())
    throw ShapeMismatch("model has " + std::to_string(w.size()) + " weights, dataset has " + std::to_string(ds.d()) +
                        " features");
}

double predict(const double* x, const std::vector<double>& w) {
  double p = 0;
  for (std::size_t j = 0; j < w.size(); ++j) p += x[j] * w[j];
  return p;
}

}  // namespace

double loss(const ModelWeights& w, const SyntheticDataset& ds) {
  check_dims(w, ds);
  double sum = 0;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const double r = predict(ds.row(i), w.values) - ds.labels[i];
    sum += r * r;
  }
  return sum / (2.0 * static_cast<double>(ds.n()));
}

std::vector<double> gradient(const ModelWeights& w, const SyntheticDataset& ds) {
  check_dims(w, ds);
  std::vector<double> g(w.size(), 0.0);
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const double* x = ds.row(i);
    const double r = predict(x, w.values) - ds.labels[i];
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += r * x[j];
  }
  for (auto& v : g) v /= static_cast<double>(ds.n());
  return g;
}

double accuracy(const ModelWeights& w, const SyntheticDataset& ds) {
  check_dims(w, ds);
  double mean = 0;
  for (double y : ds.labels) mean += y;
  mean /= static_cast<double>(ds.n());
  double sse = 0;
  double sst = 0;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const double r = predict(ds.row(i), w.values) - ds.labels[i];
    sse += r * r;
    sst += (ds.labels[i] - mean) * (ds.labels[i] - mean);
  }
  if (sst == 0) return sse == 0 ? 1.0 : 0.0;
  return std::clamp(1.0 - sse / sst, 0.0, 1.0);
}

ModelUpdate local_train(const ModelWeights& w, const SyntheticDataset& ds, int epochs, double lr) {
  ModelUpdate u;
  u.weights = w;
  u.sample_count = ds.n();
  for (int e = 0; e < epochs; ++e) {
    const auto g = gradient(u.weights, ds);
    for (std::size_t j = 0; j < g.size(); ++j) u.weights.values[j] -= lr * g[j];
    const double l = loss(u.weights, ds);
    if (!std::isfinite(l)) throw DivergenceDetected("loss became non-finite at epoch " + std::to_string(e + 1));
  }
  return u;
}

}  // namespace flame::fl
