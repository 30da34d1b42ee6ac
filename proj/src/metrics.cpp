#include "crann/metrics.hpp"

#include <cmath>
#include <string>

#include "crann/error.hpp"

namespace crann {

namespace {

void check_shapes(const Matrix& pred, const Matrix& actual) {
  if (pred.rows() != actual.rows() || pred.cols() != actual.cols())
    throw DimensionError("metric shapes differ: [" + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                         "] vs [" + std::to_string(actual.rows()) + "x" + std::to_string(actual.cols()) + "]");
  if (pred.rows() * pred.cols() == 0) throw DimensionError("metrics need at least one cell");
}

MetricAccumulator pooled(const Matrix& pred, const Matrix& actual) {
  check_shapes(pred, actual);
  MetricAccumulator acc;
  acc.add(pred, actual);
  return acc;
}

}  // namespace

nlohmann::json MetricResult::to_json() const {
  return {{"rmse", rmse}, {"bias", bias}, {"wmape", wmape}, {"cells", cells}};
}

void MetricAccumulator::add(std::span<const double> pred, std::span<const double> actual) {
  if (pred.size() != actual.size())
    throw DimensionError("metric inputs differ in size: " + std::to_string(pred.size()) + " vs " +
                         std::to_string(actual.size()));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - actual[i];
    sq_ += e * e;
    err_ += e;
    abs_err_ += std::abs(e);
    abs_actual_ += std::abs(actual[i]);
  }
  n_ += pred.size();
}

void MetricAccumulator::add(const Matrix& pred, const Matrix& actual) {
  check_shapes(pred, actual);
  add(std::span<const double>(pred.data()), std::span<const double>(actual.data()));
}

MetricResult MetricAccumulator::result() const {
  if (n_ == 0) throw MetricError("no cells accumulated");
  if (!(abs_actual_ > 0.0)) throw MetricError("WMAPE is undefined when every actual value is zero");
  MetricResult r;
  const double n = static_cast<double>(n_);
  r.rmse = std::sqrt(sq_ / n);
  r.bias = err_ / n;
  r.wmape = 100.0 * abs_err_ / abs_actual_;
  r.cells = n_;
  return r;
}

double rmse(const Matrix& pred, const Matrix& actual) {
  check_shapes(pred, actual);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.data().size(); ++i) {
    const double e = pred.data()[i] - actual.data()[i];
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(pred.data().size()));
}

double bias(const Matrix& pred, const Matrix& actual) {
  check_shapes(pred, actual);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.data().size(); ++i) s += pred.data()[i] - actual.data()[i];
  return s / static_cast<double>(pred.data().size());
}

double wmape(const Matrix& pred, const Matrix& actual) {
  return pooled(pred, actual).result().wmape;
}

}  // namespace crann
