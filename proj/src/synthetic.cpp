#include "crann/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "crann/error.hpp"
#include "crann/rng.hpp"

namespace crann {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::size_t pos_mod(std::int64_t t, std::int64_t p) { return static_cast<std::size_t>(((t % p) + p) % p); }

// center, scale, lower bound, upper bound, per channel in kWeatherNames order
struct ChannelShape {
  double center, scale, lo, hi;
};
constexpr ChannelShape kWeatherShape[kWeatherChannels] = {
    {15.0, 7.0, -20.0, 45.0},  {250.0, 220.0, 0.0, 1100.0}, {3.0, 1.5, 0.0, 30.0}, {180.0, 80.0, 0.0, 359.9},
    {0.2, 0.4, 0.0, 50.0},     {1013.0, 6.0, 950.0, 1060.0}, {60.0, 15.0, 0.0, 100.0}, {3.0, 2.5, 0.0, 11.0}};

}  // namespace

std::vector<std::vector<double>> SynthConfig::coupling_C() const {
  const auto S = sensors;
  std::vector<std::vector<double>> C(S, std::vector<double>(S, 0.0));
  if (coupling == "none") {
  } else if (coupling == "ring") {
    if (S > 1)
      for (std::size_t s = 0; s < S; ++s) C[s][(s + S - 1) % S] = coupling_strength;
  } else if (coupling == "driver") {
    for (std::size_t s = 1; s < S; ++s) C[s][0] = coupling_strength;
  } else if (coupling == "uniform") {
    if (S > 1)
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t k = 0; k < S; ++k)
          if (k != s) C[s][k] = coupling_strength / static_cast<double>(S - 1);
  } else if (coupling == "matrix") {
    if (coupling_matrix.size() != S) throw ConfigError("coupling_matrix must have one row per sensor");
    for (const auto& row : coupling_matrix)
      if (row.size() != S) throw ConfigError("coupling_matrix rows must have one entry per sensor");
    C = coupling_matrix;
  } else {
    throw ConfigError("unknown coupling '" + coupling + "' (none, ring, driver, uniform, matrix)");
  }
  for (std::size_t s = 0; s < S; ++s) {
    double row = 0.0;
    for (double v : C[s]) row += std::abs(v);
    if (row > 1.0 + 1e-12) throw ConfigError("coupling row " + std::to_string(s) + " sums to more than 1");
  }
  const double rho = spectral_radius(C);
  if (rho >= 1.0 - 1e-12) throw ConfigError("coupling is unstable: spectral radius " + std::to_string(rho) + " >= 1");
  return C;
}

void SynthConfig::validate() const {
  if (sensors == 0) throw ConfigError("synthetic data needs at least one sensor");
  if (n_days < 16) throw ConfigError("synthetic data needs n_days >= 16, got " + std::to_string(n_days));
  if (!parse_iso_minutes(start)) throw ConfigError("bad synthetic start time '" + start + "'");
  if (noise_std < 0.0 || driver_noise_std < 0.0) throw ConfigError("noise standard deviations must be >= 0");
  if (weather_correlation < -1.0 || weather_correlation > 1.0)
    throw ConfigError("weather_correlation must lie in [-1, 1]");
  coupling_C();
}

nlohmann::json SynthConfig::to_json() const {
  return {{"sensors", sensors},
          {"n_days", n_days},
          {"start", start},
          {"base", base},
          {"base_spread", base_spread},
          {"daily_amplitude", daily_amplitude},
          {"weekly_amplitude", weekly_amplitude},
          {"phase_spread", phase_spread},
          {"slope", slope},
          {"noise_std", noise_std},
          {"driver_noise_std", driver_noise_std},
          {"coupling", coupling},
          {"coupling_strength", coupling_strength},
          {"coupling_matrix", coupling_matrix},
          {"burn_in", burn_in},
          {"weather_correlation", weather_correlation},
          {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.sensors = j.value("sensors", c.sensors);
  c.n_days = j.value("n_days", c.n_days);
  c.start = j.value("start", c.start);
  c.base = j.value("base", c.base);
  c.base_spread = j.value("base_spread", c.base_spread);
  c.daily_amplitude = j.value("daily_amplitude", c.daily_amplitude);
  c.weekly_amplitude = j.value("weekly_amplitude", c.weekly_amplitude);
  c.phase_spread = j.value("phase_spread", c.phase_spread);
  c.slope = j.value("slope", c.slope);
  c.noise_std = j.value("noise_std", c.noise_std);
  c.driver_noise_std = j.value("driver_noise_std", c.driver_noise_std);
  c.coupling = j.value("coupling", c.coupling);
  c.coupling_strength = j.value("coupling_strength", c.coupling_strength);
  c.coupling_matrix = j.value("coupling_matrix", c.coupling_matrix);
  c.burn_in = j.value("burn_in", c.burn_in);
  c.weather_correlation = j.value("weather_correlation", c.weather_correlation);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

double spectral_radius(const std::vector<std::vector<double>>& m) {
  const auto n = static_cast<Eigen::Index>(m.size());
  if (n == 0) return 0.0;
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  Eigen::EigenSolver<Eigen::MatrixXd> es(a, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

Panel generate(const SynthConfig& cfg) {
  cfg.validate();
  const auto C = cfg.coupling_C();
  const std::size_t S = cfg.sensors, n = cfg.n_days * 24;
  const auto first = static_cast<HourIndex>(*parse_iso_minutes(cfg.start) / 60);
  const Rng root(cfg.seed);

  Rng layout = root.split("layout");
  std::vector<double> base(S), phase(S);
  Panel p;
  for (std::size_t s = 0; s < S; ++s) {
    base[s] = cfg.base + layout.uniform(-cfg.base_spread, cfg.base_spread);
    phase[s] = layout.uniform(-cfg.phase_spread, cfg.phase_spread);
    char id[24];
    std::snprintf(id, sizeof id, "s%02zu", s);
    // a loose cluster of points around central Madrid
    p.sensors.push_back({id, -3.70 + layout.uniform(-0.05, 0.05), 40.42 + layout.uniform(-0.05, 0.05)});
  }

  Rng noise = root.split("noise");
  p.time_index.resize(n);
  p.traffic = Matrix(n, S);
  std::vector<double> prev(base), cur(S);
  const auto t0 = static_cast<std::int64_t>(first) - static_cast<std::int64_t>(cfg.burn_in);
  for (std::size_t step = 0; step < cfg.burn_in + n; ++step) {
    const std::int64_t t = t0 + static_cast<std::int64_t>(step);
    // seasonal terms use t mod period so noiseless series repeat exactly
    const double weekly = cfg.weekly_amplitude * std::sin(kTwoPi * static_cast<double>(pos_mod(t, 168)) / 168.0);
    const double trend = cfg.slope * static_cast<double>(t - static_cast<std::int64_t>(first)) / 24.0;
    const auto hod = static_cast<double>(pos_mod(t, 24));
    for (std::size_t s = 0; s < S; ++s) {
      double v = base[s] + cfg.daily_amplitude * std::sin(kTwoPi * hod / 24.0 + phase[s]) + weekly + trend;
      for (std::size_t k = 0; k < S; ++k) v += C[s][k] * prev[k];
      if (cfg.noise_std > 0.0) v += noise.normal(0.0, cfg.noise_std);
      if (s == 0 && cfg.driver_noise_std > 0.0) v += noise.normal(0.0, cfg.driver_noise_std);
      cur[s] = std::max(0.0, v);
    }
    prev = cur;
    if (step < cfg.burn_in) continue;
    const auto r = step - cfg.burn_in;
    p.time_index[r] = first + static_cast<HourIndex>(r);
    for (std::size_t s = 0; s < S; ++s) p.traffic(r, s) = cur[s];
  }

  // weather: a smooth daily cycle plus slow AR(1) drift, mixed with the
  // standardized zone mean traffic by weather_correlation
  std::vector<double> zone(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t s = 0; s < S; ++s) zone[r] += p.traffic(r, s);
    zone[r] /= static_cast<double>(S);
  }
  double mu = 0.0, var = 0.0;
  for (double z : zone) mu += z;
  mu /= static_cast<double>(n);
  for (double z : zone) var += (z - mu) * (z - mu);
  const double sd = std::sqrt(var / static_cast<double>(n));
  Rng wrng = root.split("weather");
  p.weather = Matrix(n, kWeatherChannels);
  const double rho = cfg.weather_correlation, own = std::sqrt(1.0 - rho * rho);
  for (std::size_t c = 0; c < kWeatherChannels; ++c) {
    const auto& shape = kWeatherShape[c];
    const double psi = wrng.uniform(0.0, kTwoPi);
    double drift = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      drift = 0.98 * drift + std::sqrt(1.0 - 0.98 * 0.98) * wrng.normal();
      const double hod = static_cast<double>(pos_mod(p.time_index[r], 24));
      const double u = (std::sqrt(2.0) * std::sin(kTwoPi * hod / 24.0 + psi) + drift) / std::sqrt(3.0);
      const double z = sd > 0.0 ? (zone[r] - mu) / sd : 0.0;
      p.weather(r, c) = std::clamp(shape.center + shape.scale * (rho * z + own * u), shape.lo, shape.hi);
    }
  }
  return p;
}

}  // namespace crann
