#include "crann/crann.hpp"

#include <cmath>

#include "crann/error.hpp"

namespace crann {

nlohmann::json CrannConfig::to_json() const {
  return {{"temporal", temporal.to_json()},
          {"spatial", spatial.to_json()},
          {"ar_terms", ar_terms},
          {"exog_channels", exog_channels}};
}

CrannConfig CrannConfig::from_json(const nlohmann::json& j) {
  CrannConfig c;
  if (j.contains("temporal")) c.temporal = TemporalConfig::from_json(j.at("temporal"));
  if (j.contains("spatial")) c.spatial = SpatialConfig::from_json(j.at("spatial"));
  c.ar_terms = j.value("ar_terms", c.ar_terms);
  c.exog_channels = j.value("exog_channels", c.exog_channels);
  return c;
}

std::vector<FeatureGroup> FeatureLayout::groups(const std::vector<std::string>& sensor_ids) const {
  std::vector<FeatureGroup> g;
  FeatureGroup mean{"Mean", {}};
  for (std::size_t h = 0; h < horizon; ++h) mean.indices.push_back(h);
  g.push_back(std::move(mean));
  for (std::size_t k = 0; k < sensors; ++k) {
    FeatureGroup s{"Sensor_" + (k < sensor_ids.size() ? sensor_ids[k] : std::to_string(k)), {}};
    for (std::size_t h = 0; h < horizon; ++h) s.indices.push_back(spatial_offset() + h * sensors + k);
    g.push_back(std::move(s));
  }
  for (std::size_t a = 0; a < ar_terms; ++a) {
    FeatureGroup s{"AR_t-" + std::to_string(a + 1), {}};
    for (std::size_t k = 0; k < sensors; ++k) s.indices.push_back(ar_offset() + a * sensors + k);
    g.push_back(std::move(s));
  }
  for (std::size_t c = 0; c < exog_channels; ++c) {
    FeatureGroup s{c < kWeatherNames.size() ? kWeatherNames[c] : "exog_" + std::to_string(c), {}};
    for (std::size_t h = 0; h < horizon; ++h) s.indices.push_back(exog_offset() + h * exog_channels + c);
    g.push_back(std::move(s));
  }
  return g;
}

Tensor assemble_features(const Tensor& mean_forecast, const Tensor& spatial_forecast, const Tensor& ar_terms,
                         const Tensor& exog) {
  if (mean_forecast.rank() != 2 || spatial_forecast.rank() != 3 || exog.rank() != 3)
    throw DimensionError("assemble_features: unexpected ranks " + shape_str(mean_forecast.shape()) + ", " +
                         shape_str(spatial_forecast.shape()) + ", " + shape_str(exog.shape()));
  const auto B = mean_forecast.dim(0), T = mean_forecast.dim(1), S = spatial_forecast.dim(2);
  if (spatial_forecast.dim(0) != B || spatial_forecast.dim(1) != T || exog.dim(0) != B || exog.dim(1) != T)
    throw DimensionError("assemble_features: batch or horizon mismatch between " + shape_str(mean_forecast.shape()) +
                         ", " + shape_str(spatial_forecast.shape()) + " and " + shape_str(exog.shape()));
  std::vector<Tensor> parts{mean_forecast, reshape(spatial_forecast, {B, T * S})};
  if (ar_terms.defined()) {
    if (ar_terms.rank() != 3 || ar_terms.dim(0) != B || ar_terms.dim(2) != S)
      throw DimensionError("assemble_features: AR terms " + shape_str(ar_terms.shape()) + " do not match " +
                           shape_str(spatial_forecast.shape()));
    parts.push_back(reshape(ar_terms, {B, ar_terms.dim(1) * S}));
  }
  parts.push_back(reshape(exog, {B, T * exog.dim(2)}));
  return concat(parts, 1);
}

CrannModel::CrannModel(const CrannConfig& cfg, SensorGrid grid, const Rng& rng) : cfg_(cfg) {
  if (cfg.spatial.horizon != cfg.temporal.horizon)
    throw ConfigError("temporal and spatial horizons differ (" + std::to_string(cfg.temporal.horizon) + " vs " +
                      std::to_string(cfg.spatial.horizon) + ")");
  temporal = TemporalModule(cfg.temporal, rng.split("temporal"));
  spatial = SpatialModule(cfg.spatial, std::move(grid), rng.split("spatial"));
  layout_ = {cfg.temporal.horizon, spatial.grid().n_sensors(), cfg.ar_terms, cfg.exog_channels};
  dense = Linear(layout_.size(), layout_.horizon * layout_.sensors, rng.split("dense"));
  temporal.register_into(temporal_params_, "temporal.");
  spatial.register_into(spatial_params_, "spatial.");
  dense.register_into(dense_params_, "dense.");
  params_.append("", temporal_params_);
  params_.append("", spatial_params_);
  params_.append("", dense_params_);
}

CrannOutputs CrannModel::forward_detailed(const Batch& batch, bool training) {
  CrannOutputs out;
  Tensor teacher;
  if (training && cfg_.temporal.teacher_forcing && batch.target.defined()) teacher = mean_axis(batch.target, 2);
  out.temporal = temporal.forward(batch.temporal, training, teacher);
  out.spatial = spatial.forward(batch.spatial, training);
  if (cfg_.ar_terms > 0 && (!batch.ar.defined() || batch.ar.dim(1) != cfg_.ar_terms))
    throw DimensionError("batch carries " + (batch.ar.defined() ? shape_str(batch.ar.shape()) : std::string("no")) +
                         " AR terms, model expects " + std::to_string(cfg_.ar_terms));
  if (batch.exog.rank() != 3 || batch.exog.dim(2) != cfg_.exog_channels)
    throw DimensionError("batch exogenous block " + shape_str(batch.exog.shape()) + " does not carry " +
                         std::to_string(cfg_.exog_channels) + " channels");
  out.features = assemble_features(out.temporal.prediction, out.spatial.prediction,
                                   cfg_.ar_terms > 0 ? batch.ar : Tensor{}, batch.exog);
  out.prediction = dense_stage(out.features);
  for (double v : out.prediction.values())
    if (!std::isfinite(v)) throw NumericError("CRANN produced a non-finite prediction");
  return out;
}

Tensor CrannModel::dense_stage(const Tensor& features) const {
  if (features.rank() != 2 || features.dim(1) != layout_.size())
    throw DimensionError("dense stage expects [B x " + std::to_string(layout_.size()) + "], got " +
                         shape_str(features.shape()));
  return reshape(dense.forward(features), {features.dim(0), layout_.horizon, layout_.sensors});
}

Tensor CrannModel::phase_loss(const Batch& batch, const std::string& phase, bool training) {
  if (phase == "joint") return mse(forward(batch, training), batch.target);
  if (phase == "temporal") {
    Tensor teacher;
    auto zone = mean_axis(batch.target, 2);
    if (training && cfg_.temporal.teacher_forcing) teacher = zone;
    return mse(temporal.forward(batch.temporal, training, teacher).prediction, zone);
  }
  if (phase == "spatial") return mse(spatial.forward(batch.spatial, training).prediction, batch.target);
  throw ConfigError("unknown training phase '" + phase + "'");
}

ParameterSet& CrannModel::phase_parameters(const std::string& phase) {
  if (phase == "joint") return params_;
  if (phase == "temporal") return temporal_params_;
  if (phase == "spatial") return spatial_params_;
  if (phase == "dense") return dense_params_;
  throw ConfigError("unknown parameter group '" + phase + "'");
}

nlohmann::json CrannModel::config() const {
  auto j = cfg_.to_json();
  j["grid"] = spatial.grid().to_json();
  return j;
}

nlohmann::json CrannModel::architecture() const {
  return {{"kind", "crann"},
          {"temporal", temporal.architecture()},
          {"spatial", spatial.architecture()},
          {"dense", {{"layers", 1}, {"inputs", layout_.size()}, {"outputs", layout_.horizon * layout_.sensors}}},
          {"parameters",
           {{"temporal", temporal_params_.count()},
            {"spatial", spatial_params_.count()},
            {"dense", dense_params_.count()},
            {"total", params_.count()}}}};
}

}  // namespace crann
