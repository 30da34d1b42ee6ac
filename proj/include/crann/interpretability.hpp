#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "crann/crann.hpp"

namespace crann {

/// Mean temporal attention map [horizon x lookback] over the samples;
/// column j is the encoder state lookback - j hours before the origin.
Matrix temporal_attention_summary(CrannModel& model, const SpotDataset& data, std::span<const std::size_t> samples,
                                  std::size_t batch_size = 128);

/// Mean weight per lag on lags congruent to the forecast step modulo
/// `period`, averaged over forecast steps. Uniform attention gives 1 / lookback.
double seasonal_lag_weight(const Matrix& temporal_summary, std::size_t period = 24);

struct SpatialAttentionSummary {
  std::vector<std::string> sensor_ids;
  Matrix pairwise;                  // [S x S], row = target j, column = source k
  std::vector<double> per_sensor;   // [S], mean over targets of pairwise[., k]
};

SpatialAttentionSummary spatial_attention_summary(CrannModel& model, const SpotDataset& data,
                                                  std::span<const std::size_t> samples, std::size_t batch_size = 128);

/// Full [T x S x S] mean attention tensor, flattened row-major.
std::vector<double> spatial_attention_tensor(CrannModel& model, const SpotDataset& data,
                                             std::span<const std::size_t> samples, std::size_t batch_size = 128);

struct ShapleyConfig {
  std::size_t permutations = 100;
  std::uint64_t seed = 0;
  /// "mean": one reference point, the background mean. "sample": each
  /// permutation draws its reference from the background rows.
  std::string background = "mean";

  nlohmann::json to_json() const;
  static ShapleyConfig from_json(const nlohmann::json& j);
};

struct AttributionReport {
  std::vector<std::string> groups;
  std::vector<double> mean_abs;  // one per group, >= 0
  std::size_t permutations = 0;
  std::size_t samples = 0;
  std::size_t outputs = 0;

  nlohmann::json to_json() const;
};

/// Rows of features [N x F] -> rows of outputs [N x ...].
using FeatureFn = std::function<Tensor(const Tensor&)>;

/// Permutation-sampling Shapley values over feature groups. For each sample
/// and permutation, groups are switched from the reference to the sample's
/// values in permutation order; a group's value at an output cell is its
/// marginal change averaged over permutations. The report gives, per group,
/// the mean of |value| over samples and output cells.
AttributionReport shapley_mc(const FeatureFn& fn, const Matrix& background, const Matrix& explain,
                             const std::vector<FeatureGroup>& groups, const ShapleyConfig& cfg);

/// Dense-stage input features [N x F] for the samples (evaluation mode).
Matrix crann_features(CrannModel& model, const SpotDataset& data, std::span<const std::size_t> samples,
                      std::size_t batch_size = 128);

/// Shapley attribution of the CRANN dense stage, background from
/// `background_samples` (normally the training set).
AttributionReport explain_dense(CrannModel& model, const SpotDataset& data,
                                std::span<const std::size_t> background_samples,
                                std::span<const std::size_t> explain_samples, const ShapleyConfig& cfg);

void write_temporal_csv(std::ostream& out, const Matrix& summary);
void write_pairwise_csv(std::ostream& out, const SpatialAttentionSummary& s);
void write_per_sensor_csv(std::ostream& out, const SpatialAttentionSummary& s);
void write_attribution_csv(std::ostream& out, const AttributionReport& r);

}  // namespace crann
