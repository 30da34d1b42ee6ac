#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "crann/tensor.hpp"
#include "crann/timeutil.hpp"

namespace crann {

inline constexpr std::size_t kWeatherChannels = 8;
inline const std::array<std::string, kWeatherChannels> kWeatherNames = {
    "temperature", "solar_radiation", "wind_speed", "wind_direction", "rainfall", "pressure", "humidity", "uv"};

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) { return std::isnan(v); }

/// Dense row-major matrix of doubles; missing cells are NaN.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  bool operator==(const Matrix& o) const;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

struct SensorInfo {
  std::string id;
  double longitude = 0.0;
  double latitude = 0.0;
};

/// Parsed traffic readings grouped by sensor and by the hour they fall in.
struct RawTraffic {
  std::map<std::string, std::map<HourIndex, std::vector<double>>> hours;

  bool empty() const { return hours.empty(); }
};

/// Aligned hourly multi-sensor panel. Traffic is [n_times x S] in
/// vehicles/hour, weather is [n_times x 8] in the kWeatherNames order.
/// Cells may be NaN only before impute_missing.
struct Panel {
  std::vector<HourIndex> time_index;
  std::vector<SensorInfo> sensors;
  Matrix traffic;
  Matrix weather;

  std::size_t n_times() const { return time_index.size(); }
  std::size_t n_sensors() const { return sensors.size(); }
  std::vector<std::string> sensor_ids() const;
  bool has_missing() const;
  /// Throws IngestionError when the documented invariants do not hold.
  void validate(bool allow_missing) const;
};

struct TimeRange {
  HourIndex first;
  HourIndex last;  // inclusive
};

// ---- ingestion -----------------------------------------------------------

/// CSV `timestamp,sensor_id,intensity`. When `known_sensors` is non-empty,
/// rows for other sensors are rejected.
RawTraffic ingest_traffic(std::istream& in, const std::vector<std::string>& known_sensors = {});
RawTraffic ingest_traffic(const std::filesystem::path& path, const std::vector<std::string>& known_sensors = {});

/// Hourly weather CSV; returns hour -> 8 channels.
std::map<HourIndex, std::array<double, kWeatherChannels>> ingest_weather(std::istream& in);
std::map<HourIndex, std::array<double, kWeatherChannels>> ingest_weather(const std::filesystem::path& path);

std::vector<SensorInfo> ingest_sensors(std::istream& in);
std::vector<SensorInfo> ingest_sensors(const std::filesystem::path& path);

/// Per sensor-hour mean of the sub-hourly readings over a contiguous hourly
/// index covering every sensor's first to last hour. Hours without readings
/// are NaN. Sensor order follows `sensors` when given, else id order.
Panel aggregate_hourly(const RawTraffic& raw, const std::vector<SensorInfo>& sensors = {});

/// Places weather rows onto the panel's time index (NaN where absent).
void attach_weather(Panel& panel, const std::map<HourIndex, std::array<double, kWeatherChannels>>& weather);

/// Marks traffic cells inside the ranges as missing (manual outlier removal).
void apply_exclusions(Panel& panel, const std::vector<TimeRange>& ranges);

/// Replaces each missing cell by the mean of the same series at the same
/// hour-of-day and day-of-week; empty groups fall back to the series mean.
/// Applied to traffic and weather columns alike.
Panel impute_missing(const Panel& panel);

// ---- CSV export ----------------------------------------------------------

/// Doubles are written in shortest round-trip form, so re-ingesting a
/// written panel reproduces it exactly. Missing traffic cells are omitted,
/// missing weather cells are left empty.
void write_traffic_csv(std::ostream& out, const Panel& panel);
void write_weather_csv(std::ostream& out, const Panel& panel);
void write_sensors_csv(std::ostream& out, const Panel& panel);

struct PanelFiles {
  std::filesystem::path traffic;
  std::filesystem::path weather;
  std::filesystem::path sensors;  // may be empty

  static PanelFiles in(const std::filesystem::path& dir);
};

PanelFiles write_panel(const Panel& panel, const std::filesystem::path& dir);
/// Ingest, aggregate hourly and align weather; no imputation.
Panel read_panel(const PanelFiles& files);

// ---- normalization -------------------------------------------------------

struct MinMax {
  double min = 0.0;
  double max = 1.0;
  double apply(double x) const { return (x - min) / (max - min); }
  double invert(double y) const { return y * (max - min) + min; }
};

/// Per-sensor (and per-weather-channel) min-max constants fitted on
/// training rows only. Out-of-range values are not clipped.
struct NormalizationParams {
  std::vector<std::string> sensor_ids;
  std::vector<MinMax> traffic;
  std::array<MinMax, kWeatherChannels> weather{};

  double apply(std::size_t sensor, double x) const { return traffic.at(sensor).apply(x); }
  double invert(std::size_t sensor, double y) const { return traffic.at(sensor).invert(y); }

  nlohmann::json to_json() const;
  static NormalizationParams from_json(const nlohmann::json& j);
};

NormalizationParams fit_minmax(const Panel& panel, std::span<const std::size_t> train_rows);

// ---- spot samples --------------------------------------------------------

struct WindowConfig {
  std::size_t temporal_lookback = 336;
  std::size_t spatial_lags = 24;
  std::size_t horizon = 24;
  std::size_t ar_terms = 4;
  /// Extra history exposed to baselines (LSTM/seq2seq lookback, seasonal lag).
  std::size_t history = 336;

  /// Rows needed before the origin.
  std::size_t max_lookback() const;
  nlohmann::json to_json() const;
  static WindowConfig from_json(const nlohmann::json& j);
};

struct SpotSample {
  std::vector<double> temporal_input;  // [lookback] zone mean
  Matrix spatial_input;                // [lags x S]
  Matrix ar_terms;                     // [ar x S], row r = origin - 1 - r
  Matrix exog;                         // [horizon x 8]
  Matrix target;                       // [horizon x S]
  HourIndex origin = 0;
};

/// A normalized panel plus the admissible forecast origins (one per hour).
class SpotDataset {
 public:
  SpotDataset(const Panel& panel, const NormalizationParams& params, WindowConfig window);

  std::size_t size() const noexcept { return n_samples_; }
  std::size_t n_sensors() const noexcept { return traffic_.cols(); }
  const WindowConfig& window() const noexcept { return window_; }
  const NormalizationParams& params() const noexcept { return params_; }
  const std::vector<HourIndex>& time_index() const noexcept { return time_index_; }

  /// Panel row of the first forecast step of sample i.
  std::size_t origin_row(std::size_t i) const { return window_.max_lookback() + i; }
  HourIndex origin(std::size_t i) const { return time_index_[origin_row(i)]; }
  /// Sample whose first forecast hour is `hour`, if admissible.
  std::optional<std::size_t> sample_at(HourIndex hour) const;

  SpotSample sample(std::size_t i) const;

  const Matrix& normalized_traffic() const noexcept { return traffic_; }
  const Matrix& normalized_weather() const noexcept { return weather_; }
  const std::vector<double>& zone_mean() const noexcept { return zone_mean_; }

 private:
  NormalizationParams params_;
  WindowConfig window_;
  std::vector<HourIndex> time_index_;
  Matrix traffic_;
  Matrix weather_;
  std::vector<double> zone_mean_;
  std::size_t n_samples_ = 0;
};

std::size_t count_spot_samples(std::size_t n_times, const WindowConfig& window);
std::vector<SpotSample> make_spot_samples(const Panel& panel, const NormalizationParams& params,
                                          const WindowConfig& window = {});

/// Panel rows touched by the given samples (inputs, history and targets).
std::vector<std::size_t> rows_covered(std::span<const std::size_t> samples, std::size_t n_times,
                                      const WindowConfig& window);

/// Model-ready tensors for a set of samples. All tensors are constants.
struct Batch {
  std::size_t size = 0;
  Tensor temporal;  // [B x lookback]
  Tensor spatial;   // [B x lags x S]
  Tensor ar;        // [B x ar x S]
  Tensor exog;      // [B x horizon x 8]
  Tensor target;    // [B x horizon x S]
  Tensor history;   // [B x history x S]
  std::vector<std::size_t> samples;
};

Batch make_batch(const SpotDataset& data, std::span<const std::size_t> samples);

// ---- blocked cross-validation --------------------------------------------

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

struct FoldPlan {
  std::size_t n_samples = 0;
  std::size_t k = 10;
  std::size_t gap = 0;
  double validation_fraction = 0.0;
  std::vector<Fold> folds;

  nlohmann::json to_json() const;
  static FoldPlan from_json(const nlohmann::json& j);
};

inline constexpr double kDefaultValidationFraction = 0.2;

/// Contiguous test blocks without repetition. Each fold takes a validation
/// block of floor(validation_fraction * block) samples right after its
/// test block (before it for the last block), `gap` samples away, and
/// trains on every other origin farther than `gap` from all test origins.
FoldPlan blocked_kfold(std::size_t n_samples, std::size_t k, std::size_t gap,
                       double validation_fraction = kDefaultValidationFraction);

/// Smallest |o - o'| over the given pairs of index sets (SIZE_MAX if empty).
std::size_t min_separation(std::span<const std::size_t> a, std::span<const std::size_t> b);

}  // namespace crann
