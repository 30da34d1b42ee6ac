#pragma once

#include <memory>
#include <string>

#include <json.hpp>

#include "crann/dataset.hpp"
#include "crann/nn.hpp"

namespace crann {

/// Common interface of CRANN, the neural baselines and the naive predictors.
/// Every forecaster maps a Batch to a normalized [B x horizon x S] forecast.
class Forecaster {
 public:
  virtual ~Forecaster() = default;

  virtual std::string kind() const = 0;
  virtual Tensor forward(const Batch& batch, bool training) = 0;
  /// Scalar training objective; defaults to the MSE of forward().
  virtual Tensor loss(const Batch& batch, bool training) { return mse(forward(batch, training), batch.target); }

  virtual ParameterSet& parameters() = 0;
  const ParameterSet& parameters() const { return const_cast<Forecaster*>(this)->parameters(); }
  std::size_t parameter_count() const { return parameters().count(); }
  bool trainable() const { return !parameters().tensors().empty(); }

  /// Constructor arguments, sufficient to rebuild an identical instance.
  virtual nlohmann::json config() const = 0;
  /// Layer-by-layer description (widths, layers, parameter counts).
  virtual nlohmann::json architecture() const = 0;
};

using ForecasterPtr = std::unique_ptr<Forecaster>;

}  // namespace crann
