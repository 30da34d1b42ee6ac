#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "crann/dataset.hpp"
#include "crann/forecaster.hpp"
#include "crann/metrics.hpp"

namespace crann {

struct TrainConfig {
  std::size_t batch_size = 64;
  double initial_lr = 0.01;
  std::size_t max_epochs = 100;
  /// Stop after this many epochs without a new best validation loss.
  std::size_t patience = 10;
  double decay_factor = 0.5;
  /// Epochs without improvement before each decay; 0 means patience / 2.
  std::size_t decay_patience = 0;
  std::uint64_t seed = 0;
  /// "joint" trains everything at once; "pretrain" first fits the CRANN
  /// temporal and spatial modules on their own targets.
  std::string mode = "joint";
  /// In pretrain mode, keep the pretrained modules fixed in the joint phase.
  bool freeze_pretrained = false;

  std::size_t effective_decay_patience() const;
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  std::string phase;
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double lr = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t stopping_epoch = 0;  // epochs run in the final phase
  std::size_t best_epoch = 0;      // 1-based, final phase
  double best_validation_loss = 0.0;
  double seconds = 0.0;
  nlohmann::json metrics = nlohmann::json::object();

  std::vector<double> train_curve(const std::string& phase = "joint") const;
  std::vector<double> validation_curve(const std::string& phase = "joint") const;
  nlohmann::json to_json() const;
};

/// Mini-batch Adam on MSE over `fold.train`, early stopping on
/// `fold.validation`; the best-validation parameters are restored.
TrainReport train(Forecaster& model, const SpotDataset& data, const Fold& fold, const TrainConfig& cfg);

/// Mean normalized MSE over the samples in evaluation mode.
double validation_loss(Forecaster& model, const SpotDataset& data, std::span<const std::size_t> samples,
                       std::size_t batch_size = 128);

/// Forecasts in vehicles/hour, one [horizon x S] matrix per sample,
/// denormalized with `norm` (the dataset's own constants by default).
std::vector<Matrix> predict(Forecaster& model, const SpotDataset& data, std::span<const std::size_t> samples,
                            const NormalizationParams& norm, std::size_t batch_size = 128);
std::vector<Matrix> predict(Forecaster& model, const SpotDataset& data, std::span<const std::size_t> samples);

/// RMSE, bias and WMAPE pooled over every cell of every sample, after
/// denormalizing predictions and targets. Throws ContractError when `norm`
/// does not cover every sensor with a usable range.
MetricResult evaluate(Forecaster& model, const SpotDataset& data, std::span<const std::size_t> samples,
                      const NormalizationParams& norm, std::size_t batch_size = 128);
MetricResult evaluate(Forecaster& model, const SpotDataset& data, std::span<const std::size_t> samples);

}  // namespace crann
