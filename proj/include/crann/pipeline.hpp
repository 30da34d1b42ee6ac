#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "crann/checkpoint.hpp"
#include "crann/dataset.hpp"
#include "crann/interpretability.hpp"
#include "crann/metrics.hpp"
#include "crann/synthetic.hpp"
#include "crann/training.hpp"

namespace crann {

struct DataSection {
  /// Directory with traffic.csv, weather.csv and an optional sensors.csv.
  std::filesystem::path dir;
  /// Individual files; each one overrides the file of the same role in `dir`.
  std::filesystem::path traffic, weather, sensors;
  std::vector<TimeRange> exclusions;
  WindowConfig window;
  std::size_t folds = 10;
  /// Samples between any test/validation origin and any training origin.
  /// Unset means max_lookback + horizon (360 with the default window).
  std::optional<std::size_t> gap;
  double validation_fraction = kDefaultValidationFraction;

  PanelFiles files() const;
  std::size_t effective_gap() const;
};

struct ModelSection {
  std::string kind = "crann";
  /// Per model kind, merge-patched over that kind's defaults
  /// (see default_model_config), e.g. {"crann": {"temporal": {"hidden": 32}}}.
  nlohmann::json params = nlohmann::json::object();
};

struct EvalSection {
  std::size_t batch_size = 128;
};

struct ExplainSection {
  ShapleyConfig shapley;
  std::size_t fold = 0;
  /// Caps on explained (test) and background (training) samples; the
  /// samples kept are evenly spaced over the set.
  std::size_t max_samples = 256;
  std::size_t max_background = 2048;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "runs";
  DataSection data;
  ModelSection model;
  TrainConfig train;
  EvalSection eval;
  ExplainSection explain;
  SynthConfig synth;

  /// Relative paths are resolved against `base`. Unknown keys and bad
  /// values throw ConfigError.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
  static RunConfig load(const std::filesystem::path& file, const std::vector<std::string>& overrides = {});
  nlohmann::json to_json() const;

  std::filesystem::path prepared_dir() const { return out_dir / "prepared"; }
  std::filesystem::path fold_dir(const std::string& kind, std::size_t fold) const;
  /// Seed of everything random in one fold (model init, shuffling).
  std::uint64_t fold_seed(std::size_t fold) const;
};

/// Applies `path.to.key=value` assignments; the value is parsed as JSON
/// and falls back to a plain string.
void apply_overrides(nlohmann::json& j, const std::vector<std::string>& overrides);

/// Cleaned panel, fold plan and per-fold normalization fitted on the rows
/// each fold trains on.
struct Prepared {
  Panel panel;
  FoldPlan plan;
  std::vector<NormalizationParams> normalization;
  WindowConfig window;

  SpotDataset dataset(std::size_t fold) const;
  const Fold& fold(std::size_t k) const;
};

/// Ingest, drop excluded ranges, impute.
Panel load_clean_panel(const DataSection& data);
Prepared prepare(const DataSection& data);
Prepared prepare(const Panel& clean, const DataSection& data);
void write_prepared(const Prepared& p, const DataSection& data, const std::filesystem::path& dir);
/// The cached preparation when it was made from the same data section,
/// otherwise a fresh one.
Prepared load_or_prepare(const RunConfig& cfg);

struct FoldResult {
  std::size_t fold = 0;
  TrainReport report;
  MetricResult metrics;
  std::vector<Matrix> predictions;  // vehicles/hour, one per test sample
  std::vector<Matrix> actuals;
};

/// Trains (or, with `reuse`, loads an existing checkpoint of) the configured
/// model on one fold, saves checkpoint and report, and scores the test block.
FoldResult run_fold(const RunConfig& cfg, const Prepared& prep, std::size_t fold, bool reuse = false);

struct EvaluationSummary {
  std::string model;
  std::vector<FoldResult> folds;
  MetricResult pooled;

  nlohmann::json to_json() const;
  void write_csv(std::ostream& out) const;
};

/// Runs the listed folds on up to `jobs` threads. Results are ordered by
/// fold and do not depend on `jobs`.
EvaluationSummary run_folds(const RunConfig& cfg, const Prepared& prep, const std::vector<std::size_t>& folds,
                            std::size_t jobs = 1, bool reuse = false);

/// Forecast in vehicles/hour for the sample whose first forecast hour is
/// `origin`. Throws WindowingError when the panel cannot supply it.
Matrix forecast_at(LoadedModel& loaded, const Panel& clean, HourIndex origin);
void write_forecast_csv(std::ostream& out, const Matrix& forecast, HourIndex origin,
                        const std::vector<std::string>& sensor_ids);

/// Evenly spaced subset of at most `cap` elements (all of them when cap is 0).
std::vector<std::size_t> evenly_spaced(const std::vector<std::size_t>& v, std::size_t cap);

/// Writes the attention or attribution CSVs of `kind` (temporal, spatial,
/// shapley) into `out_dir` and returns the files written.
std::vector<std::filesystem::path> explain(const RunConfig& cfg, LoadedModel& loaded, const Panel& clean,
                                           const std::string& kind, const std::filesystem::path& out_dir);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace crann
