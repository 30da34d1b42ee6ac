#include "crann/models.hpp"

#include "crann/baselines.hpp"
#include "crann/crann.hpp"
#include "crann/error.hpp"

namespace crann {

const std::vector<std::string>& model_kinds() {
  static const std::vector<std::string> kinds{"crann",   "cnn",         "lstm",     "cnn_lstm",
                                              "seq2seq", "persistence", "seasonal", "oracle"};
  return kinds;
}

nlohmann::json default_model_config(const std::string& kind, const std::vector<SensorInfo>& sensors,
                                    const WindowConfig& window, const nlohmann::json& overrides) {
  const auto S = sensors.size();
  nlohmann::json j;
  auto grid_of = [&](const nlohmann::json& o) {
    SpatialConfig sc;
    if (o.is_object() && o.contains("spatial")) sc = SpatialConfig::from_json(o.at("spatial"));
    if (o.is_object() && o.contains("layout")) sc.layout = SpatialConfig::from_json({{"layout", o.at("layout")}}).layout;
    return build_grid(sensors, sc.layout).to_json();
  };
  if (kind == "crann") {
    CrannConfig c;
    c.temporal.lookback = window.temporal_lookback;
    c.temporal.horizon = window.horizon;
    c.spatial.lags = window.spatial_lags;
    c.spatial.horizon = window.horizon;
    c.ar_terms = window.ar_terms;
    j = c.to_json();
    j["grid"] = grid_of(overrides);
  } else if (kind == "cnn") {
    j = {{"lags", window.spatial_lags},
         {"horizon", window.horizon},
         {"channels", {32, 32, 32, 64, 64, 64}},
         {"grid", grid_of(overrides)}};
  } else if (kind == "cnn_lstm") {
    j = {{"lags", window.spatial_lags}, {"horizon", window.horizon}, {"channels", {32, 32, 64, 64, 64}},
         {"hidden", 100},               {"layers", 2},               {"grid", grid_of(overrides)}};
  } else if (kind == "lstm" || kind == "seq2seq") {
    j = {{"sensors", S}, {"lookback", window.history}, {"horizon", window.horizon}, {"hidden", 100}, {"layers", 2}};
  } else if (kind == "persistence") {
    j = {{"horizon", window.horizon}};
  } else if (kind == "seasonal") {
    j = {{"horizon", window.horizon}, {"period", 168}};
  } else if (kind == "oracle") {
    j = nlohmann::json::object();
  } else {
    throw ConfigError("unknown model kind '" + kind + "'");
  }
  if (overrides.is_object()) {
    auto patch = overrides;
    patch.erase("layout");
    j.merge_patch(patch);
  }
  return j;
}

ForecasterPtr make_forecaster(const std::string& kind, const nlohmann::json& j, std::uint64_t seed) {
  const Rng rng = Rng(seed).split(kind);
  try {
    if (kind == "crann") return std::make_unique<CrannModel>(CrannConfig::from_json(j), SensorGrid::from_json(j.at("grid")), rng);
    if (kind == "cnn") {
      CnnBaseline::Config c;
      c.lags = j.value("lags", c.lags);
      c.horizon = j.value("horizon", c.horizon);
      c.channels = j.value("channels", c.channels);
      return std::make_unique<CnnBaseline>(c, SensorGrid::from_json(j.at("grid")), rng);
    }
    if (kind == "cnn_lstm") {
      CnnLstmBaseline::Config c;
      c.lags = j.value("lags", c.lags);
      c.horizon = j.value("horizon", c.horizon);
      c.channels = j.value("channels", c.channels);
      c.hidden = j.value("hidden", c.hidden);
      c.layers = j.value("layers", c.layers);
      return std::make_unique<CnnLstmBaseline>(c, SensorGrid::from_json(j.at("grid")), rng);
    }
    if (kind == "lstm" || kind == "seq2seq") {
      LstmBaseline::Config c;
      c.sensors = j.at("sensors").get<std::size_t>();
      c.lookback = j.value("lookback", c.lookback);
      c.horizon = j.value("horizon", c.horizon);
      c.hidden = j.value("hidden", c.hidden);
      c.layers = j.value("layers", c.layers);
      if (kind == "lstm") return std::make_unique<LstmBaseline>(c, rng);
      return std::make_unique<Seq2SeqBaseline>(
          Seq2SeqBaseline::Config{c.sensors, c.lookback, c.horizon, c.hidden, c.layers}, rng);
    }
    if (kind == "persistence") return std::make_unique<PersistenceForecaster>(j.value("horizon", std::size_t{24}));
    if (kind == "seasonal")
      return std::make_unique<SeasonalNaiveForecaster>(j.value("horizon", std::size_t{24}),
                                                       j.value("period", std::size_t{168}));
    if (kind == "oracle") return std::make_unique<OracleForecaster>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid " + kind + " model configuration: " + e.what());
  }
  throw ConfigError("unknown model kind '" + kind + "'");
}

}  // namespace crann
