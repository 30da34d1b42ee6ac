#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "crann/forecaster.hpp"
#include "crann/spatial.hpp"
#include "crann/temporal.hpp"

namespace crann {

struct CrannConfig {
  TemporalConfig temporal;
  SpatialConfig spatial;
  std::size_t ar_terms = 4;
  std::size_t exog_channels = kWeatherChannels;

  std::size_t horizon() const { return temporal.horizon; }
  nlohmann::json to_json() const;
  static CrannConfig from_json(const nlohmann::json& j);
};

/// A named set of positions in the flattened dense-module input.
struct FeatureGroup {
  std::string name;
  std::vector<std::size_t> indices;
};

/// Flattened dense input: [mean forecast | spatial forecast (row-major) |
/// AR terms (row-major) | exogenous (row-major)].
struct FeatureLayout {
  std::size_t horizon = 0, sensors = 0, ar_terms = 0, exog_channels = 0;

  std::size_t size() const { return horizon + horizon * sensors + ar_terms * sensors + horizon * exog_channels; }
  std::size_t spatial_offset() const { return horizon; }
  std::size_t ar_offset() const { return horizon + horizon * sensors; }
  std::size_t exog_offset() const { return ar_offset() + ar_terms * sensors; }
  /// Mean, Sensor_<id> per sensor, AR_t-1.., one group per weather channel.
  std::vector<FeatureGroup> groups(const std::vector<std::string>& sensor_ids = {}) const;
};

/// mean [B x T], spatial [B x T x S], ar [B x A x S], exog [B x T x E] -> [B x F]
Tensor assemble_features(const Tensor& mean_forecast, const Tensor& spatial_forecast, const Tensor& ar_terms,
                         const Tensor& exog);

struct CrannOutputs {
  Tensor prediction;         // [B x T x S]
  TemporalOutput temporal;
  SpatialOutput spatial;
  Tensor features;           // [B x F]
};

class CrannModel : public Forecaster {
 public:
  CrannModel(const CrannConfig& cfg, SensorGrid grid, const Rng& rng);

  std::string kind() const override { return "crann"; }
  Tensor forward(const Batch& batch, bool training) override { return forward_detailed(batch, training).prediction; }
  CrannOutputs forward_detailed(const Batch& batch, bool training);
  /// The fully connected fusion stage alone: features [B x F] -> [B x T x S].
  Tensor dense_stage(const Tensor& features) const;

  /// Losses for staged training: "temporal" fits the zone mean of the
  /// target, "spatial" fits the target directly, "joint" is the full model.
  Tensor phase_loss(const Batch& batch, const std::string& phase, bool training);
  ParameterSet& phase_parameters(const std::string& phase);

  ParameterSet& parameters() override { return params_; }
  nlohmann::json config() const override;
  nlohmann::json architecture() const override;

  const CrannConfig& settings() const noexcept { return cfg_; }
  const FeatureLayout& layout() const noexcept { return layout_; }
  std::size_t n_sensors() const noexcept { return layout_.sensors; }

  TemporalModule temporal;
  SpatialModule spatial;
  Linear dense;

 private:
  CrannConfig cfg_;
  FeatureLayout layout_;
  ParameterSet params_, temporal_params_, spatial_params_, dense_params_;
};

}  // namespace crann
