#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

#include "crann/dataset.hpp"

namespace crann {

struct MetricResult {
  double rmse = 0.0;
  double bias = 0.0;   // mean signed residual, prediction minus actual
  double wmape = 0.0;  // percent
  std::size_t cells = 0;

  nlohmann::json to_json() const;
};

double rmse(const Matrix& pred, const Matrix& actual);
double bias(const Matrix& pred, const Matrix& actual);
/// Throws MetricError when every actual value is zero.
double wmape(const Matrix& pred, const Matrix& actual);

/// Pools cells across any number of prediction blocks before the formulas
/// are applied, so a fold's metric is not an average of per-sample metrics.
class MetricAccumulator {
 public:
  void add(std::span<const double> pred, std::span<const double> actual);
  void add(const Matrix& pred, const Matrix& actual);
  std::size_t cells() const noexcept { return n_; }
  MetricResult result() const;

 private:
  double sq_ = 0.0, err_ = 0.0, abs_err_ = 0.0, abs_actual_ = 0.0;
  std::size_t n_ = 0;
};

}  // namespace crann
