#include "crann/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <numeric>
#include <set>
#include <sstream>

#include "crann/error.hpp"

namespace crann {

namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    auto field = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) field.remove_suffix(1);
    out.push_back(field);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

bool blank(std::string_view line) {
  return line.find_first_not_of(" \t\r") == std::string_view::npos;
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path.string());
  return in;
}

void expect_header(const std::vector<std::string_view>& got, const std::vector<std::string>& want,
                   const std::string& what) {
  bool ok = got.size() == want.size();
  for (std::size_t i = 0; ok && i < want.size(); ++i) ok = got[i] == want[i];
  if (!ok) {
    std::string w;
    for (const auto& s : want) w += (w.empty() ? "" : ",") + s;
    throw IngestionError(what + ": line 1: expected header '" + w + "'");
  }
}

std::string at_line(std::size_t line) { return ": line " + std::to_string(line) + ": "; }

}  // namespace

bool Matrix::operator==(const Matrix& o) const {
  if (rows_ != o.rows_ || cols_ != o.cols_) return false;
  for (std::size_t i = 0; i < data_.size(); ++i) {
    const double a = data_[i], b = o.data_[i];
    if (!(a == b || (std::isnan(a) && std::isnan(b)))) return false;
  }
  return true;
}

std::vector<std::string> Panel::sensor_ids() const {
  std::vector<std::string> ids;
  ids.reserve(sensors.size());
  for (const auto& s : sensors) ids.push_back(s.id);
  return ids;
}

bool Panel::has_missing() const {
  auto any_nan = [](const Matrix& m) {
    return std::any_of(m.data().begin(), m.data().end(), [](double v) { return std::isnan(v); });
  };
  return any_nan(traffic) || any_nan(weather);
}

void Panel::validate(bool allow_missing) const {
  const auto n = time_index.size();
  if (traffic.rows() != n || traffic.cols() != sensors.size())
    throw IngestionError("panel traffic matrix does not match time index and sensor list");
  if (weather.rows() != n || weather.cols() != kWeatherChannels)
    throw IngestionError("panel weather matrix must be [n_times x 8]");
  for (std::size_t i = 1; i < n; ++i)
    if (time_index[i] != time_index[i - 1] + 1)
      throw IngestionError("panel time index has a gap at " + format_iso_hour(time_index[i - 1]));
  std::set<std::string> seen;
  for (const auto& s : sensors)
    if (!seen.insert(s.id).second) throw IngestionError("duplicate sensor id '" + s.id + "'");
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < sensors.size(); ++c) {
      const double v = traffic(r, c);
      if (std::isnan(v) ? !allow_missing : (v < 0.0 || !std::isfinite(v)))
        throw IngestionError("invalid traffic value for sensor '" + sensors[c].id + "' at " +
                             format_iso_hour(time_index[r]));
    }
  if (!allow_missing)
    for (double v : weather.data())
      if (!std::isfinite(v)) throw IngestionError("panel weather contains missing values");
}

// ---- CSV export ----------------------------------------------------------

namespace {

std::string fmt(double v) {
  char buf[40];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::ofstream create_or_throw(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path.string());
  return out;
}

}  // namespace

void write_traffic_csv(std::ostream& out, const Panel& panel) {
  out << "timestamp,sensor_id,intensity\n";
  for (std::size_t r = 0; r < panel.n_times(); ++r) {
    const auto stamp = format_iso_hour(panel.time_index[r]);
    for (std::size_t s = 0; s < panel.n_sensors(); ++s)
      if (!is_missing(panel.traffic(r, s))) out << stamp << ',' << panel.sensors[s].id << ',' << fmt(panel.traffic(r, s)) << '\n';
  }
}

void write_weather_csv(std::ostream& out, const Panel& panel) {
  out << "timestamp";
  for (const auto& n : kWeatherNames) out << ',' << n;
  out << '\n';
  for (std::size_t r = 0; r < panel.n_times(); ++r) {
    out << format_iso_hour(panel.time_index[r]);
    for (std::size_t c = 0; c < kWeatherChannels; ++c) {
      out << ',';
      if (!is_missing(panel.weather(r, c))) out << fmt(panel.weather(r, c));
    }
    out << '\n';
  }
}

void write_sensors_csv(std::ostream& out, const Panel& panel) {
  out << "sensor_id,longitude,latitude\n";
  for (const auto& s : panel.sensors) out << s.id << ',' << fmt(s.longitude) << ',' << fmt(s.latitude) << '\n';
}

PanelFiles PanelFiles::in(const std::filesystem::path& dir) {
  return {dir / "traffic.csv", dir / "weather.csv", dir / "sensors.csv"};
}

PanelFiles write_panel(const Panel& panel, const std::filesystem::path& dir) {
  auto files = PanelFiles::in(dir);
  auto t = create_or_throw(files.traffic);
  write_traffic_csv(t, panel);
  auto w = create_or_throw(files.weather);
  write_weather_csv(w, panel);
  auto s = create_or_throw(files.sensors);
  write_sensors_csv(s, panel);
  return files;
}

Panel read_panel(const PanelFiles& files) {
  std::vector<SensorInfo> sensors;
  if (!files.sensors.empty()) sensors = ingest_sensors(files.sensors);
  std::vector<std::string> ids;
  for (const auto& s : sensors) ids.push_back(s.id);
  auto panel = aggregate_hourly(ingest_traffic(files.traffic, ids), sensors);
  if (!files.weather.empty()) attach_weather(panel, ingest_weather(files.weather));
  return panel;
}

// ---- ingestion -----------------------------------------------------------

RawTraffic ingest_traffic(std::istream& in, const std::vector<std::string>& known_sensors) {
  RawTraffic raw;
  const std::set<std::string> known(known_sensors.begin(), known_sensors.end());
  std::set<std::pair<std::string, std::int64_t>> stamps;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    auto f = split_csv(line);
    if (!header) {
      expect_header(f, {"timestamp", "sensor_id", "intensity"}, "traffic");
      header = true;
      continue;
    }
    if (f.size() != 3) throw IngestionError("traffic" + at_line(lineno) + "expected 3 fields");
    auto minutes = parse_iso_minutes(f[0]);
    if (!minutes) throw IngestionError("traffic" + at_line(lineno) + "bad timestamp '" + std::string(f[0]) + "'");
    std::string id(f[1]);
    if (id.empty()) throw IngestionError("traffic" + at_line(lineno) + "empty sensor id");
    if (!known.empty() && !known.count(id))
      throw IngestionError("traffic" + at_line(lineno) + "unknown sensor '" + id + "'");
    auto value = parse_double(f[2]);
    if (!value || !std::isfinite(*value) || *value < 0.0)
      throw IngestionError("traffic" + at_line(lineno) + "bad intensity '" + std::string(f[2]) + "'");
    if (!stamps.emplace(id, *minutes).second)
      throw IngestionError("traffic" + at_line(lineno) + "duplicate reading for sensor '" + id + "' at " +
                           std::string(f[0]));
    raw.hours[id][floor_hour(*minutes)].push_back(*value);
  }
  return raw;
}

RawTraffic ingest_traffic(const std::filesystem::path& path, const std::vector<std::string>& known_sensors) {
  auto in = open_or_throw(path);
  return ingest_traffic(in, known_sensors);
}

std::map<HourIndex, std::array<double, kWeatherChannels>> ingest_weather(std::istream& in) {
  std::map<HourIndex, std::array<double, kWeatherChannels>> out;
  std::vector<std::string> want{"timestamp"};
  want.insert(want.end(), kWeatherNames.begin(), kWeatherNames.end());
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    auto f = split_csv(line);
    if (!header) {
      expect_header(f, want, "weather");
      header = true;
      continue;
    }
    if (f.size() != want.size()) throw IngestionError("weather" + at_line(lineno) + "expected 9 fields");
    auto minutes = parse_iso_minutes(f[0]);
    if (!minutes) throw IngestionError("weather" + at_line(lineno) + "bad timestamp '" + std::string(f[0]) + "'");
    std::array<double, kWeatherChannels> row{};
    for (std::size_t c = 0; c < kWeatherChannels; ++c) {
      if (f[c + 1].empty()) {
        row[c] = kMissing;
        continue;
      }
      auto v = parse_double(f[c + 1]);
      if (!v || !std::isfinite(*v))
        throw IngestionError("weather" + at_line(lineno) + "bad " + kWeatherNames[c] + " '" + std::string(f[c + 1]) +
                             "'");
      row[c] = *v;
    }
    if (!out.emplace(floor_hour(*minutes), row).second)
      throw IngestionError("weather" + at_line(lineno) + "duplicate hour " + std::string(f[0]));
  }
  return out;
}

std::map<HourIndex, std::array<double, kWeatherChannels>> ingest_weather(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  return ingest_weather(in);
}

std::vector<SensorInfo> ingest_sensors(std::istream& in) {
  std::vector<SensorInfo> out;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    auto f = split_csv(line);
    if (!header) {
      expect_header(f, {"sensor_id", "longitude", "latitude"}, "sensors");
      header = true;
      continue;
    }
    if (f.size() != 3) throw IngestionError("sensors" + at_line(lineno) + "expected 3 fields");
    auto lon = parse_double(f[1]);
    auto lat = parse_double(f[2]);
    if (f[0].empty() || !lon || !lat) throw IngestionError("sensors" + at_line(lineno) + "malformed row");
    if (!seen.insert(std::string(f[0])).second)
      throw IngestionError("sensors" + at_line(lineno) + "duplicate sensor id '" + std::string(f[0]) + "'");
    out.push_back({std::string(f[0]), *lon, *lat});
  }
  return out;
}

std::vector<SensorInfo> ingest_sensors(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  return ingest_sensors(in);
}

Panel aggregate_hourly(const RawTraffic& raw, const std::vector<SensorInfo>& sensors) {
  Panel p;
  if (sensors.empty()) {
    for (const auto& [id, _] : raw.hours) p.sensors.push_back({id, 0.0, 0.0});
  } else {
    p.sensors = sensors;
  }
  HourIndex first = std::numeric_limits<HourIndex>::max(), last = std::numeric_limits<HourIndex>::min();
  for (const auto& [id, hours] : raw.hours) {
    if (hours.empty()) continue;
    first = std::min(first, hours.begin()->first);
    last = std::max(last, hours.rbegin()->first);
  }
  if (first > last) {
    p.traffic = Matrix(0, p.sensors.size());
    p.weather = Matrix(0, kWeatherChannels);
    return p;
  }
  const auto n = static_cast<std::size_t>(last - first + 1);
  p.time_index.resize(n);
  std::iota(p.time_index.begin(), p.time_index.end(), first);
  p.traffic = Matrix(n, p.sensors.size(), kMissing);
  p.weather = Matrix(n, kWeatherChannels, kMissing);
  for (std::size_t c = 0; c < p.sensors.size(); ++c) {
    auto it = raw.hours.find(p.sensors[c].id);
    if (it == raw.hours.end()) continue;
    for (const auto& [hour, values] : it->second) {
      if (values.empty()) continue;
      double s = 0.0;
      for (double v : values) s += v;
      p.traffic(static_cast<std::size_t>(hour - first), c) = s / static_cast<double>(values.size());
    }
  }
  for (const auto& [id, _] : raw.hours) {
    bool listed = std::any_of(p.sensors.begin(), p.sensors.end(), [&](const SensorInfo& s) { return s.id == id; });
    if (!listed) throw IngestionError("traffic sensor '" + id + "' missing from sensor metadata");
  }
  return p;
}

void attach_weather(Panel& panel, const std::map<HourIndex, std::array<double, kWeatherChannels>>& weather) {
  panel.weather = Matrix(panel.n_times(), kWeatherChannels, kMissing);
  for (std::size_t r = 0; r < panel.n_times(); ++r) {
    auto it = weather.find(panel.time_index[r]);
    if (it == weather.end()) continue;
    for (std::size_t c = 0; c < kWeatherChannels; ++c) panel.weather(r, c) = it->second[c];
  }
}

void apply_exclusions(Panel& panel, const std::vector<TimeRange>& ranges) {
  for (const auto& range : ranges) {
    if (range.last < range.first) throw ConfigError("exclusion range ends before it starts");
    for (std::size_t r = 0; r < panel.n_times(); ++r) {
      const auto t = panel.time_index[r];
      if (t < range.first || t > range.last) continue;
      for (std::size_t c = 0; c < panel.n_sensors(); ++c) panel.traffic(r, c) = kMissing;
    }
  }
}

namespace {

// Returns false when the column has no observed value at all.
bool impute_column(Matrix& m, std::size_t col, const std::vector<HourIndex>& time_index) {
  std::array<double, 168> sum{};
  std::array<std::size_t, 168> cnt{};
  double total = 0.0;
  std::size_t total_n = 0;
  auto slot = [&](std::size_t r) {
    const auto t = time_index[r];
    return static_cast<std::size_t>(day_of_week(t) * 24 + hour_of_day(t));
  };
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double v = m(r, col);
    if (std::isnan(v)) continue;
    sum[slot(r)] += v;
    ++cnt[slot(r)];
    total += v;
    ++total_n;
  }
  if (total_n == 0) return false;
  const double fallback = total / static_cast<double>(total_n);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (!std::isnan(m(r, col))) continue;
    const auto s = slot(r);
    m(r, col) = cnt[s] ? sum[s] / static_cast<double>(cnt[s]) : fallback;
  }
  return true;
}

}  // namespace

Panel impute_missing(const Panel& panel) {
  Panel out = panel;
  for (std::size_t c = 0; c < out.n_sensors(); ++c)
    if (!impute_column(out.traffic, c, out.time_index))
      throw IngestionError("sensor '" + out.sensors[c].id + "' has no observed values");
  // A weather channel with no readings at all carries no information; zero it.
  for (std::size_t c = 0; c < kWeatherChannels; ++c)
    if (!impute_column(out.weather, c, out.time_index))
      for (std::size_t r = 0; r < out.weather.rows(); ++r) out.weather(r, c) = 0.0;
  return out;
}

// ---- normalization -------------------------------------------------------

nlohmann::json NormalizationParams::to_json() const {
  nlohmann::json j;
  j["traffic"] = nlohmann::json::object();
  j["sensor_order"] = sensor_ids;
  for (std::size_t i = 0; i < sensor_ids.size(); ++i)
    j["traffic"][sensor_ids[i]] = {{"min", traffic[i].min}, {"max", traffic[i].max}};
  j["weather"] = nlohmann::json::object();
  for (std::size_t c = 0; c < kWeatherChannels; ++c)
    j["weather"][kWeatherNames[c]] = {{"min", weather[c].min}, {"max", weather[c].max}};
  return j;
}

NormalizationParams NormalizationParams::from_json(const nlohmann::json& j) {
  NormalizationParams p;
  try {
    p.sensor_ids = j.at("sensor_order").get<std::vector<std::string>>();
    for (const auto& id : p.sensor_ids) {
      const auto& e = j.at("traffic").at(id);
      p.traffic.push_back({e.at("min").get<double>(), e.at("max").get<double>()});
    }
    for (std::size_t c = 0; c < kWeatherChannels; ++c) {
      const auto& e = j.at("weather").at(kWeatherNames[c]);
      p.weather[c] = {e.at("min").get<double>(), e.at("max").get<double>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw NormalizationError(std::string("malformed normalization parameters: ") + e.what());
  }
  for (std::size_t i = 0; i < p.traffic.size(); ++i)
    if (!(p.traffic[i].max > p.traffic[i].min))
      throw NormalizationError("normalization range for sensor '" + p.sensor_ids[i] + "' is empty");
  return p;
}

NormalizationParams fit_minmax(const Panel& panel, std::span<const std::size_t> train_rows) {
  if (train_rows.empty()) throw NormalizationError("no training rows to fit normalization on");
  NormalizationParams p;
  p.sensor_ids = panel.sensor_ids();
  auto fit = [&](const Matrix& m, std::size_t c, bool& any) {
    MinMax mm{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    any = false;
    for (auto r : train_rows) {
      if (r >= m.rows()) throw NormalizationError("training row " + std::to_string(r) + " outside the panel");
      const double v = m(r, c);
      if (std::isnan(v)) continue;
      mm.min = std::min(mm.min, v);
      mm.max = std::max(mm.max, v);
      any = true;
    }
    return mm;
  };
  for (std::size_t c = 0; c < panel.n_sensors(); ++c) {
    bool any = false;
    auto mm = fit(panel.traffic, c, any);
    if (!any) throw NormalizationError("sensor '" + p.sensor_ids[c] + "' has no training values");
    if (!(mm.max > mm.min))
      throw NormalizationError("sensor '" + p.sensor_ids[c] + "' is constant over the training rows");
    p.traffic.push_back(mm);
  }
  for (std::size_t c = 0; c < kWeatherChannels; ++c) {
    bool any = false;
    auto mm = fit(panel.weather, c, any);
    if (!any) mm = {0.0, 1.0};
    // constant weather channels are common (rain, uv at night); keep them finite
    if (!(mm.max > mm.min)) mm.max = mm.min + 1.0;
    p.weather[c] = mm;
  }
  return p;
}

// ---- spot samples --------------------------------------------------------

std::size_t WindowConfig::max_lookback() const {
  return std::max({temporal_lookback, spatial_lags, ar_terms, history, std::size_t{1}});
}

nlohmann::json WindowConfig::to_json() const {
  return {{"temporal_lookback", temporal_lookback},
          {"spatial_lags", spatial_lags},
          {"horizon", horizon},
          {"ar_terms", ar_terms},
          {"history", history}};
}

WindowConfig WindowConfig::from_json(const nlohmann::json& j) {
  WindowConfig w;
  w.temporal_lookback = j.value("temporal_lookback", w.temporal_lookback);
  w.spatial_lags = j.value("spatial_lags", w.spatial_lags);
  w.horizon = j.value("horizon", w.horizon);
  w.ar_terms = j.value("ar_terms", w.ar_terms);
  w.history = j.value("history", w.history);
  return w;
}

std::size_t count_spot_samples(std::size_t n_times, const WindowConfig& window) {
  const auto need = window.max_lookback() + window.horizon;
  return n_times >= need ? n_times - need + 1 : 0;
}

SpotDataset::SpotDataset(const Panel& panel, const NormalizationParams& params, WindowConfig window)
    : params_(params), window_(window), time_index_(panel.time_index) {
  if (window_.horizon == 0 || window_.temporal_lookback == 0 || window_.spatial_lags == 0)
    throw WindowingError("window lengths must be positive");
  panel.validate(false);
  if (params_.traffic.size() != panel.n_sensors())
    throw WindowingError("normalization parameters cover " + std::to_string(params_.traffic.size()) +
                         " sensors, panel has " + std::to_string(panel.n_sensors()));
  for (std::size_t c = 0; c < panel.n_sensors(); ++c)
    if (params_.sensor_ids[c] != panel.sensors[c].id)
      throw WindowingError("normalization sensor order does not match the panel at '" + panel.sensors[c].id + "'");
  n_samples_ = count_spot_samples(panel.n_times(), window_);
  if (n_samples_ == 0)
    throw WindowingError("panel of " + std::to_string(panel.n_times()) + " hours is shorter than the " +
                         std::to_string(window_.max_lookback() + window_.horizon) + " hours one sample needs");
  const auto n = panel.n_times(), S = panel.n_sensors();
  traffic_ = Matrix(n, S);
  weather_ = Matrix(n, kWeatherChannels);
  zone_mean_.assign(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < S; ++c) {
      traffic_(r, c) = params_.apply(c, panel.traffic(r, c));
      acc += traffic_(r, c);
    }
    zone_mean_[r] = acc / static_cast<double>(S);
    for (std::size_t c = 0; c < kWeatherChannels; ++c) weather_(r, c) = params_.weather[c].apply(panel.weather(r, c));
  }
}

std::optional<std::size_t> SpotDataset::sample_at(HourIndex hour) const {
  if (time_index_.empty()) return std::nullopt;
  const auto row = hour - time_index_.front();
  const auto lo = static_cast<std::int64_t>(window_.max_lookback());
  if (row < lo || row >= lo + static_cast<std::int64_t>(n_samples_)) return std::nullopt;
  return static_cast<std::size_t>(row - lo);
}

SpotSample SpotDataset::sample(std::size_t i) const {
  if (i >= n_samples_) throw WindowingError("sample " + std::to_string(i) + " out of range");
  const auto r0 = origin_row(i), S = n_sensors();
  const auto& w = window_;
  SpotSample s;
  s.origin = time_index_[r0];
  s.temporal_input.assign(zone_mean_.begin() + static_cast<std::ptrdiff_t>(r0 - w.temporal_lookback),
                          zone_mean_.begin() + static_cast<std::ptrdiff_t>(r0));
  s.spatial_input = Matrix(w.spatial_lags, S);
  for (std::size_t l = 0; l < w.spatial_lags; ++l)
    for (std::size_t c = 0; c < S; ++c) s.spatial_input(l, c) = traffic_(r0 - w.spatial_lags + l, c);
  s.ar_terms = Matrix(w.ar_terms, S);
  for (std::size_t a = 0; a < w.ar_terms; ++a)
    for (std::size_t c = 0; c < S; ++c) s.ar_terms(a, c) = traffic_(r0 - 1 - a, c);
  s.exog = Matrix(w.horizon, kWeatherChannels);
  s.target = Matrix(w.horizon, S);
  for (std::size_t h = 0; h < w.horizon; ++h) {
    for (std::size_t c = 0; c < kWeatherChannels; ++c) s.exog(h, c) = weather_(r0 + h, c);
    for (std::size_t c = 0; c < S; ++c) s.target(h, c) = traffic_(r0 + h, c);
  }
  return s;
}

std::vector<SpotSample> make_spot_samples(const Panel& panel, const NormalizationParams& params,
                                          const WindowConfig& window) {
  SpotDataset data(panel, params, window);
  std::vector<SpotSample> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out.push_back(data.sample(i));
  return out;
}

std::vector<std::size_t> rows_covered(std::span<const std::size_t> samples, std::size_t n_times,
                                      const WindowConfig& window) {
  std::vector<char> hit(n_times, 0);
  const auto lb = window.max_lookback();
  for (auto i : samples) {
    const auto r0 = lb + i;
    for (auto r = r0 - lb; r < std::min(n_times, r0 + window.horizon); ++r) hit[r] = 1;
  }
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < n_times; ++r)
    if (hit[r]) rows.push_back(r);
  return rows;
}

Batch make_batch(const SpotDataset& data, std::span<const std::size_t> samples) {
  if (samples.empty()) throw WindowingError("empty batch");
  const auto& w = data.window();
  const auto B = samples.size(), S = data.n_sensors();
  const auto& tr = data.normalized_traffic();
  const auto& we = data.normalized_weather();
  const auto& zm = data.zone_mean();
  std::vector<double> temporal(B * w.temporal_lookback), spatial(B * w.spatial_lags * S), ar(B * w.ar_terms * S),
      exog(B * w.horizon * kWeatherChannels), target(B * w.horizon * S), history(B * w.history * S);
  for (std::size_t b = 0; b < B; ++b) {
    if (samples[b] >= data.size()) throw WindowingError("sample " + std::to_string(samples[b]) + " out of range");
    const auto r0 = data.origin_row(samples[b]);
    for (std::size_t l = 0; l < w.temporal_lookback; ++l) temporal[b * w.temporal_lookback + l] = zm[r0 - w.temporal_lookback + l];
    for (std::size_t l = 0; l < w.spatial_lags; ++l)
      for (std::size_t c = 0; c < S; ++c) spatial[(b * w.spatial_lags + l) * S + c] = tr(r0 - w.spatial_lags + l, c);
    for (std::size_t a = 0; a < w.ar_terms; ++a)
      for (std::size_t c = 0; c < S; ++c) ar[(b * w.ar_terms + a) * S + c] = tr(r0 - 1 - a, c);
    for (std::size_t h = 0; h < w.horizon; ++h) {
      for (std::size_t c = 0; c < kWeatherChannels; ++c) exog[(b * w.horizon + h) * kWeatherChannels + c] = we(r0 + h, c);
      for (std::size_t c = 0; c < S; ++c) target[(b * w.horizon + h) * S + c] = tr(r0 + h, c);
    }
    for (std::size_t l = 0; l < w.history; ++l)
      for (std::size_t c = 0; c < S; ++c) history[(b * w.history + l) * S + c] = tr(r0 - w.history + l, c);
  }
  Batch batch;
  batch.size = B;
  batch.samples.assign(samples.begin(), samples.end());
  batch.temporal = Tensor::from({B, w.temporal_lookback}, std::move(temporal));
  batch.spatial = Tensor::from({B, w.spatial_lags, S}, std::move(spatial));
  if (w.ar_terms > 0) batch.ar = Tensor::from({B, w.ar_terms, S}, std::move(ar));
  batch.exog = Tensor::from({B, w.horizon, kWeatherChannels}, std::move(exog));
  batch.target = Tensor::from({B, w.horizon, S}, std::move(target));
  if (w.history > 0) batch.history = Tensor::from({B, w.history, S}, std::move(history));
  return batch;
}

// ---- blocked cross-validation --------------------------------------------

nlohmann::json FoldPlan::to_json() const {
  nlohmann::json j;
  j["n_samples"] = n_samples;
  j["k"] = k;
  j["gap"] = gap;
  j["validation_fraction"] = validation_fraction;
  j["folds"] = nlohmann::json::array();
  for (const auto& f : folds) j["folds"].push_back({{"train", f.train}, {"validation", f.validation}, {"test", f.test}});
  return j;
}

FoldPlan FoldPlan::from_json(const nlohmann::json& j) {
  FoldPlan p;
  try {
    p.n_samples = j.at("n_samples").get<std::size_t>();
    p.k = j.at("k").get<std::size_t>();
    p.gap = j.at("gap").get<std::size_t>();
    p.validation_fraction = j.at("validation_fraction").get<double>();
    for (const auto& f : j.at("folds"))
      p.folds.push_back({f.at("train").get<std::vector<std::size_t>>(), f.at("validation").get<std::vector<std::size_t>>(),
                         f.at("test").get<std::vector<std::size_t>>()});
  } catch (const nlohmann::json::exception& e) {
    throw PlanningError(std::string("malformed fold plan: ") + e.what());
  }
  if (p.folds.size() != p.k) throw PlanningError("fold plan lists " + std::to_string(p.folds.size()) + " folds, k = " + std::to_string(p.k));
  return p;
}

FoldPlan blocked_kfold(std::size_t n_samples, std::size_t k, std::size_t gap, double validation_fraction) {
  if (k == 0) throw PlanningError("k must be at least 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw PlanningError("validation fraction must lie in [0, 1)");
  if (n_samples < k * (gap + 1))
    throw PlanningError(std::to_string(n_samples) + " samples cannot hold " + std::to_string(k) +
                        " folds separated by a gap of " + std::to_string(gap) + " (need " +
                        std::to_string(k * (gap + 1)) + ")");
  FoldPlan plan;
  plan.n_samples = n_samples;
  plan.k = k;
  plan.gap = gap;
  plan.validation_fraction = validation_fraction;

  using Interval = std::pair<std::size_t, std::size_t>;  // [begin, end)
  const auto base = n_samples / k, extra = n_samples % k;
  std::size_t begin = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const auto len = base + (f < extra ? 1 : 0);
    const Interval test{begin, begin + len};
    begin += len;
    const auto v = static_cast<std::size_t>(std::floor(validation_fraction * static_cast<double>(len)));

    Interval val{0, 0};
    if (v > 0) {
      // after the test block when it fits, else before it, else whatever fits after
      const auto after = test.second + gap;
      const bool fits_after = after + v <= n_samples;
      const bool fits_before = test.first >= gap + v;
      if (fits_after && (f + 1 < k || !fits_before)) {
        val = {after, after + v};
      } else if (fits_before) {
        val = {test.first - gap - v, test.first - gap};
      } else if (after < n_samples) {
        val = {after, n_samples};
      }
    }

    Fold fold;
    for (auto i = test.first; i < test.second; ++i) fold.test.push_back(i);
    for (auto i = val.first; i < val.second; ++i) fold.validation.push_back(i);
    auto far_from = [&](std::size_t o, const Interval& iv) {
      if (iv.first == iv.second) return true;
      if (o < iv.first) return iv.first - o > gap;
      if (o >= iv.second) return o - (iv.second - 1) > gap;
      return false;
    };
    for (std::size_t o = 0; o < n_samples; ++o)
      if (far_from(o, test) && (o < val.first || o >= val.second)) fold.train.push_back(o);
    if (fold.train.empty())
      throw PlanningError("fold " + std::to_string(f) + " has no training samples left after the gap of " +
                          std::to_string(gap));
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

std::size_t min_separation(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  std::vector<std::size_t> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  std::size_t best = std::numeric_limits<std::size_t>::max();
  std::size_t j = 0;
  for (auto v : x) {
    while (j < y.size() && y[j] < v) ++j;
    if (j < y.size()) best = std::min(best, y[j] - v);
    if (j > 0) best = std::min(best, v - y[j - 1]);
  }
  return best;
}

}  // namespace crann
