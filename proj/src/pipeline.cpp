#include "crann/pipeline.hpp"

#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "crann/crann.hpp"
#include "crann/error.hpp"
#include "crann/models.hpp"
#include "crann/rng.hpp"

namespace crann {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& given, const json& schema, const std::string& where) {
  if (!given.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (const auto& [key, value] : given.items()) {
    const auto path = where.empty() ? key : where + "." + key;
    if (!schema.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    const auto& expected = schema.at(key);
    if (expected.is_object() && key != "params") reject_unknown(value, expected, path);
  }
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

HourIndex parse_hour(const std::string& text, const std::string& what) {
  auto minutes = parse_iso_minutes(text);
  if (!minutes) throw ConfigError(what + ": cannot parse timestamp '" + text + "'");
  return floor_hour(*minutes);
}

json data_to_json(const DataSection& d) {
  json ex = json::array();
  for (const auto& r : d.exclusions) ex.push_back({{"first", format_iso_hour(r.first)}, {"last", format_iso_hour(r.last)}});
  return {{"dir", d.dir.string()},
          {"traffic", d.traffic.string()},
          {"weather", d.weather.string()},
          {"sensors", d.sensors.string()},
          {"exclusions", ex},
          {"window", d.window.to_json()},
          {"folds", d.folds},
          {"gap", d.gap ? json(*d.gap) : json(nullptr)},
          {"validation_fraction", d.validation_fraction}};
}

DataSection data_from_json(const json& j, const fs::path& base) {
  DataSection d;
  d.dir = resolve(j.value("dir", std::string{}), base);
  d.traffic = resolve(j.value("traffic", std::string{}), base);
  d.weather = resolve(j.value("weather", std::string{}), base);
  d.sensors = resolve(j.value("sensors", std::string{}), base);
  if (j.contains("exclusions"))
    for (const auto& r : j.at("exclusions")) {
      if (!r.is_object() || !r.contains("first") || !r.contains("last"))
        throw ConfigError("data.exclusions entries need 'first' and 'last'");
      d.exclusions.push_back({parse_hour(r.at("first").get<std::string>(), "data.exclusions"),
                              parse_hour(r.at("last").get<std::string>(), "data.exclusions")});
    }
  if (j.contains("window")) d.window = WindowConfig::from_json(j.at("window"));
  d.folds = j.value("folds", d.folds);
  if (j.contains("gap") && !j.at("gap").is_null()) d.gap = j.at("gap").get<std::size_t>();
  d.validation_fraction = j.value("validation_fraction", d.validation_fraction);
  if (d.folds < 1) throw ConfigError("data.folds must be at least 1");
  if (!(d.validation_fraction >= 0.0 && d.validation_fraction < 1.0))
    throw ConfigError("data.validation_fraction must lie in [0, 1)");
  return d;
}

json explain_to_json(const ExplainSection& e) {
  auto j = e.shapley.to_json();
  j["fold"] = e.fold;
  j["max_samples"] = e.max_samples;
  j["max_background"] = e.max_background;
  return j;
}

json train_schema() {
  auto j = TrainConfig{}.to_json();
  j.erase("seed");  // derived from the run seed per fold
  return j;
}

// Window rows [origin_row, origin_row + horizon) of the raw panel.
Matrix actual_block(const Panel& panel, std::size_t row, std::size_t horizon) {
  Matrix m(horizon, panel.n_sensors());
  for (std::size_t h = 0; h < horizon; ++h)
    for (std::size_t s = 0; s < panel.n_sensors(); ++s) m(h, s) = panel.traffic(row + h, s);
  return m;
}

}  // namespace

// ---- config ---------------------------------------------------------------

PanelFiles DataSection::files() const {
  PanelFiles f = dir.empty() ? PanelFiles{} : PanelFiles::in(dir);
  if (!traffic.empty()) f.traffic = traffic;
  if (!weather.empty()) f.weather = weather;
  if (!sensors.empty()) f.sensors = sensors;
  if (!dir.empty() && sensors.empty() && !fs::exists(f.sensors)) f.sensors.clear();
  if (f.traffic.empty() || f.weather.empty())
    throw ConfigError("data needs a 'dir' or explicit 'traffic' and 'weather' files");
  return f;
}

std::size_t DataSection::effective_gap() const { return gap ? *gap : window.max_lookback() + window.horizon; }

json RunConfig::to_json() const {
  auto train_json = train.to_json();
  train_json.erase("seed");
  return {{"seed", seed},
          {"out_dir", out_dir.string()},
          {"data", data_to_json(data)},
          {"model", {{"kind", model.kind}, {"params", model.params}}},
          {"train", train_json},
          {"eval", {{"batch_size", eval.batch_size}}},
          {"explain", explain_to_json(explain)},
          {"synth", synth.to_json()}};
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base) {
  const RunConfig defaults;
  json schema = defaults.to_json();
  schema["train"] = train_schema();
  reject_unknown(j, schema, "");

  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.out_dir = resolve(j.value("out_dir", c.out_dir.string()), base);
    if (j.contains("data")) c.data = data_from_json(j.at("data"), base);
    if (j.contains("model")) {
      const auto& m = j.at("model");
      c.model.kind = m.value("kind", c.model.kind);
      if (m.contains("params")) c.model.params = m.at("params");
    }
    if (c.model.params.is_null()) c.model.params = json::object();
    if (!c.model.params.is_object()) throw ConfigError("model.params must be an object keyed by model kind");
    // each entry is checked against the defaults of its kind
    for (const auto& [kind, params] : c.model.params.items()) {
      auto schema = default_model_config(kind, {SensorInfo{"probe", 0.0, 0.0}}, c.data.window, json::object());
      schema["layout"] = "rowmajor";
      reject_unknown(params, schema, "model.params." + kind);
    }
    default_model_config(c.model.kind, {SensorInfo{"probe", 0.0, 0.0}}, c.data.window, json::object());

    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    if (j.contains("eval")) c.eval.batch_size = j.at("eval").value("batch_size", c.eval.batch_size);
    if (c.eval.batch_size == 0) throw ConfigError("eval.batch_size must be at least 1");
    if (j.contains("explain")) {
      const auto& e = j.at("explain");
      json shap = json::object();
      for (const char* k : {"permutations", "seed", "background"})
        if (e.contains(k)) shap[k] = e.at(k);
      c.explain.shapley = ShapleyConfig::from_json(shap);
      c.explain.fold = e.value("fold", c.explain.fold);
      c.explain.max_samples = e.value("max_samples", c.explain.max_samples);
      c.explain.max_background = e.value("max_background", c.explain.max_background);
    }
    if (j.contains("synth")) c.synth = SynthConfig::from_json(j.at("synth"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& file, const std::vector<std::string>& overrides) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + file.string() + " is not valid JSON: " + e.what());
  }
  apply_overrides(j, overrides);
  return from_json(j, fs::absolute(file).parent_path());
}

fs::path RunConfig::fold_dir(const std::string& kind, std::size_t fold) const {
  return out_dir / kind / ("fold_" + std::to_string(fold));
}

std::uint64_t RunConfig::fold_seed(std::size_t fold) const { return Rng(seed).split(fold).seed(); }

void apply_overrides(json& j, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not key=value");
    const auto key = o.substr(0, eq), text = o.substr(eq + 1);
    json* node = &j;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
      if (!node->is_object()) *node = json::object();
      node = &(*node)[part];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    try {
      *node = json::parse(text);
    } catch (const json::parse_error&) {
      *node = text;
    }
  }
}

// ---- preparation ------------------------------------------------------------

SpotDataset Prepared::dataset(std::size_t k) const { return SpotDataset(panel, normalization.at(k), window); }

const Fold& Prepared::fold(std::size_t k) const {
  if (k >= plan.folds.size())
    throw ConfigError("fold " + std::to_string(k) + " does not exist (the plan has " +
                      std::to_string(plan.folds.size()) + " folds, numbered from 0)");
  return plan.folds[k];
}

Panel load_clean_panel(const DataSection& data) {
  auto panel = read_panel(data.files());
  apply_exclusions(panel, data.exclusions);
  return impute_missing(panel);
}

Prepared prepare(const DataSection& data) { return prepare(load_clean_panel(data), data); }

Prepared prepare(const Panel& clean, const DataSection& data) {
  Prepared p;
  p.panel = clean;
  p.window = data.window;
  const auto n = count_spot_samples(clean.n_times(), data.window);
  p.plan = blocked_kfold(n, data.folds, data.effective_gap(), data.validation_fraction);
  for (const auto& f : p.plan.folds) {
    const auto rows = rows_covered(f.train, clean.n_times(), data.window);
    p.normalization.push_back(fit_minmax(clean, rows));
  }
  return p;
}

void write_prepared(const Prepared& p, const DataSection& data, const fs::path& dir) {
  write_panel(p.panel, dir / "panel");
  write_text(dir / "folds.json", p.plan.to_json().dump(2));
  json norms = json::array();
  for (const auto& n : p.normalization) norms.push_back(n.to_json());
  write_text(dir / "normalization.json", norms.dump(2));
  write_text(dir / "data.json", data_to_json(data).dump(2));
}

Prepared load_or_prepare(const RunConfig& cfg) {
  const auto dir = cfg.prepared_dir();
  std::ifstream stamp(dir / "data.json");
  if (stamp) {
    json cached;
    try {
      cached = json::parse(stamp);
    } catch (const json::parse_error&) {
      cached = nullptr;
    }
    if (cached == data_to_json(cfg.data)) {
      Prepared p;
      p.panel = read_panel(PanelFiles::in(dir / "panel"));
      p.window = cfg.data.window;
      std::ifstream folds(dir / "folds.json"), norms(dir / "normalization.json");
      if (!folds || !norms) throw IngestionError("prepared cache in " + dir.string() + " is incomplete");
      p.plan = FoldPlan::from_json(json::parse(folds));
      for (const auto& n : json::parse(norms)) p.normalization.push_back(NormalizationParams::from_json(n));
      if (p.normalization.size() != p.plan.folds.size())
        throw IngestionError("prepared cache in " + dir.string() + " has mismatched fold files");
      return p;
    }
  }
  return prepare(cfg.data);
}

// ---- folds -------------------------------------------------------------------

FoldResult run_fold(const RunConfig& cfg, const Prepared& prep, std::size_t k, bool reuse) {
  const auto& fold = prep.fold(k);
  if (fold.test.empty()) throw PlanningError("fold " + std::to_string(k) + " has no test samples");
  const auto data = prep.dataset(k);
  const auto dir = cfg.fold_dir(cfg.model.kind, k);
  const auto ckpt = dir / "model.ckpt";

  FoldResult r;
  r.fold = k;
  ForecasterPtr model;
  if (reuse && fs::exists(ckpt)) {
    auto loaded = load_checkpoint(ckpt);
    if (loaded.model->kind() != cfg.model.kind)
      throw CheckpointError(ckpt.string() + " holds a " + loaded.model->kind() + " model");
    model = std::move(loaded.model);
  } else {
    const auto params = default_model_config(cfg.model.kind, prep.panel.sensors, prep.window,
                                             cfg.model.params.value(cfg.model.kind, json::object()));
    model = make_forecaster(cfg.model.kind, params, cfg.fold_seed(k));
    TrainConfig tc = cfg.train;
    tc.seed = cfg.fold_seed(k);
    r.report = train(*model, data, fold, tc);
    save_checkpoint(ckpt, *model, data.params(), prep.window,
                    {{"fold", k}, {"run_seed", cfg.seed}, {"fold_seed", tc.seed}});
  }

  r.predictions = predict(*model, data, fold.test, data.params(), cfg.eval.batch_size);
  MetricAccumulator acc;
  for (std::size_t i = 0; i < fold.test.size(); ++i) {
    r.actuals.push_back(actual_block(prep.panel, data.origin_row(fold.test[i]), prep.window.horizon));
    acc.add(r.predictions[i], r.actuals[i]);
  }
  r.metrics = acc.result();
  r.report.metrics = r.metrics.to_json();
  if (!(reuse && fs::exists(dir / "train_report.json"))) write_text(dir / "train_report.json", r.report.to_json().dump(2));
  return r;
}

EvaluationSummary run_folds(const RunConfig& cfg, const Prepared& prep, const std::vector<std::size_t>& folds,
                            std::size_t jobs, bool reuse) {
  for (auto k : folds) prep.fold(k);  // range check before any work starts
  EvaluationSummary s;
  s.model = cfg.model.kind;
  s.folds.resize(folds.size());
  std::vector<std::exception_ptr> errors(folds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < folds.size(); i = next++) {
      try {
        s.folds[i] = run_fold(cfg, prep, folds[i], reuse);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto n_threads = std::max<std::size_t>(1, std::min(jobs, folds.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  MetricAccumulator pooled;
  for (const auto& f : s.folds)
    for (std::size_t i = 0; i < f.predictions.size(); ++i) pooled.add(f.predictions[i], f.actuals[i]);
  s.pooled = pooled.result();
  return s;
}

json EvaluationSummary::to_json() const {
  json folds_json = json::array();
  for (const auto& f : folds) {
    auto m = f.metrics.to_json();
    m["fold"] = f.fold;
    m["test_samples"] = f.predictions.size();
    folds_json.push_back(m);
  }
  return {{"model", model}, {"folds", folds_json}, {"pooled", pooled.to_json()}};
}

void EvaluationSummary::write_csv(std::ostream& out) const {
  out << "model,fold,rmse,bias,wmape,cells\n";
  out.precision(10);
  for (const auto& f : folds)
    out << model << ',' << f.fold << ',' << f.metrics.rmse << ',' << f.metrics.bias << ',' << f.metrics.wmape << ','
        << f.metrics.cells << '\n';
  out << model << ",pooled," << pooled.rmse << ',' << pooled.bias << ',' << pooled.wmape << ',' << pooled.cells << '\n';
}

// ---- prediction and explanation -------------------------------------------------

Matrix forecast_at(LoadedModel& loaded, const Panel& clean, HourIndex origin) {
  if (loaded.normalization.sensor_ids != clean.sensor_ids())
    throw CheckpointError("checkpoint sensors do not match the panel's sensors");
  const SpotDataset data(clean, loaded.normalization, loaded.window);
  const auto i = data.sample_at(origin);
  if (!i)
    throw WindowingError("no forecast at " + format_iso_hour(origin) + ": the panel must hold " +
                         std::to_string(loaded.window.max_lookback()) + " hours before it and " +
                         std::to_string(loaded.window.horizon) + " hours from it");
  const std::vector<std::size_t> one{*i};
  return predict(*loaded.model, data, one, loaded.normalization).front();
}

void write_forecast_csv(std::ostream& out, const Matrix& forecast, HourIndex origin,
                        const std::vector<std::string>& sensor_ids) {
  out << "timestamp";
  for (const auto& id : sensor_ids) out << ',' << id;
  out << '\n';
  out.precision(10);
  for (std::size_t h = 0; h < forecast.rows(); ++h) {
    out << format_iso_hour(origin + static_cast<HourIndex>(h));
    for (std::size_t s = 0; s < forecast.cols(); ++s) out << ',' << forecast(h, s);
    out << '\n';
  }
}

std::vector<std::size_t> evenly_spaced(const std::vector<std::size_t>& v, std::size_t cap) {
  if (cap == 0 || v.size() <= cap) return v;
  std::vector<std::size_t> out;
  out.reserve(cap);
  for (std::size_t i = 0; i < cap; ++i) out.push_back(v[i * v.size() / cap]);
  return out;
}

std::vector<fs::path> explain(const RunConfig& cfg, LoadedModel& loaded, const Panel& clean, const std::string& kind,
                              const fs::path& out_dir) {
  auto* model = dynamic_cast<CrannModel*>(loaded.model.get());
  if (!model) throw ContractError("explanations need a crann checkpoint, got " + loaded.model->kind());
  if (kind != "temporal" && kind != "spatial" && kind != "shapley")
    throw ConfigError("unknown explanation kind '" + kind + "' (temporal, spatial, shapley)");
  if (loaded.normalization.sensor_ids != clean.sensor_ids())
    throw CheckpointError("checkpoint sensors do not match the panel's sensors");

  const SpotDataset data(clean, loaded.normalization, loaded.window);
  auto data_cfg = cfg.data;
  data_cfg.window = loaded.window;
  const auto plan = blocked_kfold(data.size(), data_cfg.folds, data_cfg.effective_gap(), data_cfg.validation_fraction);
  if (cfg.explain.fold >= plan.folds.size())
    throw ConfigError("explain.fold " + std::to_string(cfg.explain.fold) + " does not exist");
  const auto& fold = plan.folds[cfg.explain.fold];
  const auto samples = evenly_spaced(fold.test, cfg.explain.max_samples);

  std::vector<fs::path> written;
  auto emit = [&](const std::string& name, const auto& writer) {
    std::ostringstream text;
    writer(text);
    write_text(out_dir / name, text.str());
    written.push_back(out_dir / name);
  };
  if (kind == "temporal") {
    const auto summary = temporal_attention_summary(*model, data, samples, cfg.eval.batch_size);
    emit("temporal_attention.csv", [&](std::ostream& o) { write_temporal_csv(o, summary); });
    emit("temporal_attention.json", [&](std::ostream& o) {
      o << json{{"seasonal_lag_weight", seasonal_lag_weight(summary)},
                {"uniform_share", 1.0 / static_cast<double>(summary.cols())},
                {"samples", samples.size()}}
               .dump(2);
    });
  } else if (kind == "spatial") {
    const auto summary = spatial_attention_summary(*model, data, samples, cfg.eval.batch_size);
    emit("spatial_pairwise.csv", [&](std::ostream& o) { write_pairwise_csv(o, summary); });
    emit("spatial_per_sensor.csv", [&](std::ostream& o) { write_per_sensor_csv(o, summary); });
  } else {
    const auto background = evenly_spaced(fold.train, cfg.explain.max_background);
    const auto report = explain_dense(*model, data, background, samples, cfg.explain.shapley);
    emit("shapley.csv", [&](std::ostream& o) { write_attribution_csv(o, report); });
    emit("shapley.json", [&](std::ostream& o) { o << report.to_json().dump(2); });
  }
  return written;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << text;
  if (!out) throw IngestionError("failed writing " + path.string());
}

}  // namespace crann
