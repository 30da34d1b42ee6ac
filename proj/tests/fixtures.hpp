#pragma once

// Random tensors and hand-built batches shared by the model and acceptance
// tests. Nothing here depends on a dataset file.

#include <vector>

#include "crann/dataset.hpp"
#include "crann/rng.hpp"
#include "crann/tensor.hpp"

namespace fixtures {

inline crann::Tensor random_tensor(crann::Shape shape, crann::Rng& rng, bool grad = false, double lo = -1.0,
                                   double hi = 1.0) {
  std::vector<double> v(crann::shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return crann::Tensor::from(std::move(shape), std::move(v), grad);
}

struct BatchShape {
  std::size_t batch = 3;
  std::size_t lookback = 12;
  std::size_t lags = 6;
  std::size_t horizon = 6;
  std::size_t sensors = 2;
  std::size_t ar = 4;
  std::size_t history = 12;
  std::size_t exog = crann::kWeatherChannels;
};

inline crann::Batch random_batch(const BatchShape& s, crann::Rng& rng) {
  crann::Batch b;
  b.size = s.batch;
  b.temporal = random_tensor({s.batch, s.lookback}, rng, false, 0.0, 1.0);
  b.spatial = random_tensor({s.batch, s.lags, s.sensors}, rng, false, 0.0, 1.0);
  b.ar = random_tensor({s.batch, s.ar, s.sensors}, rng, false, 0.0, 1.0);
  b.exog = random_tensor({s.batch, s.horizon, s.exog}, rng, false, 0.0, 1.0);
  b.target = random_tensor({s.batch, s.horizon, s.sensors}, rng, false, 0.0, 1.0);
  b.history = random_tensor({s.batch, s.history, s.sensors}, rng, false, 0.0, 1.0);
  for (std::size_t i = 0; i < s.batch; ++i) b.samples.push_back(i);
  return b;
}

}  // namespace fixtures

namespace fixtures {

/// Min-max constants fitted on every row; fine for tests that do not
/// measure leakage.
inline crann::SpotDataset dataset_from(const crann::Panel& panel, const crann::WindowConfig& window) {
  std::vector<std::size_t> rows(panel.n_times());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return crann::SpotDataset(panel, crann::fit_minmax(panel, rows), window);
}

inline std::vector<std::size_t> iota(std::size_t first, std::size_t count) {
  std::vector<std::size_t> v(count);
  for (std::size_t i = 0; i < count; ++i) v[i] = first + i;
  return v;
}

}  // namespace fixtures
