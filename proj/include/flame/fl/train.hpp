// SPDX-License-Identifier: Apache-2.0
// Least-squares linear model: loss(w) = 1/(2n) * sum_i (x_i . w - y_i)^2.
#pragma once

#include <vector>

#include "flame/common/error.hpp"
#include "flame/fl/dataset.hpp"
#include "flame/fl/model.hpp"

namespace flame::fl {

FLAME_DEFINE_ERROR(DivergenceDetected);

double loss(const ModelWeights& w, const SyntheticDataset& ds);
std::vector<double> gradient(const ModelWeights& w, const SyntheticDataset& ds);
// Coefficient of determination clipped to [0, 1].
double accuracy(const ModelWeights& w, const SyntheticDataset& ds);

// Full-batch gradient descent, one step per epoch.
ModelUpdate local_train(const ModelWeights& w, const SyntheticDataset& ds, int epochs, double lr);

}  // namespace flame::fl
