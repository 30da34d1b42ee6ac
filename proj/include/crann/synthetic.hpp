#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "crann/dataset.hpp"

namespace crann {

/// Seasonal traffic with lagged spatial coupling:
///   x_s(t) = base_s + daily sin(2 pi t/24 + phi_s) + weekly sin(2 pi t/168)
///            + slope t/24 + sum_k C[s,k] x_k(t-1) + eps_s(t),  clamped at 0.
struct SynthConfig {
  std::size_t sensors = 6;
  std::size_t n_days = 90;
  /// First emitted hour, ISO "YYYY-MM-DDTHH:00".
  std::string start = "2019-01-07T00:00";
  double base = 400.0;
  /// base_s is drawn uniformly in base +- base_spread.
  double base_spread = 100.0;
  double daily_amplitude = 200.0;
  double weekly_amplitude = 60.0;
  /// Per-sensor daily phase phi_s is drawn uniformly in +- phase_spread.
  double phase_spread = 0.5;
  /// Vehicles/hour per day.
  double slope = 0.0;
  double noise_std = 30.0;
  /// Extra noise on sensor 0 only; makes a driver sensor's innovations
  /// dominate the series it feeds.
  double driver_noise_std = 0.0;
  /// none | ring (C[s, s-1]) | driver (C[s, 0] for s > 0) | uniform (off-diagonal) | matrix
  std::string coupling = "ring";
  double coupling_strength = 0.3;
  std::vector<std::vector<double>> coupling_matrix;
  /// Hours simulated and discarded before the first emitted hour.
  std::size_t burn_in = 336;
  double weather_correlation = 0.5;
  std::uint64_t seed = 0;

  /// The effective C, validated: rows sum to at most 1 (absolute values)
  /// and the spectral radius is below 1.
  std::vector<std::vector<double>> coupling_C() const;
  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

double spectral_radius(const std::vector<std::vector<double>>& m);

/// Deterministic for a given config. Sensor ids are s00, s01, ...
Panel generate(const SynthConfig& cfg);

}  // namespace crann
