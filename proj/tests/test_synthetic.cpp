#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "crann/baselines.hpp"
#include "crann/error.hpp"
#include "crann/synthetic.hpp"
#include "crann/training.hpp"
#include "fixtures.hpp"

using namespace crann;
using Catch::Approx;

namespace {

SynthConfig quiet(std::size_t sensors = 3) {
  SynthConfig c;
  c.sensors = sensors;
  c.n_days = 21;
  c.noise_std = 0.0;
  c.coupling = "none";
  return c;
}

}  // namespace

TEST_CASE("flat configuration gives constant series at the base level", "[synthetic]") {
  auto c = quiet();
  c.daily_amplitude = c.weekly_amplitude = 0.0;
  c.base_spread = 0.0;
  auto p = generate(c);
  REQUIRE(p.n_times() == 21 * 24);
  REQUIRE(p.n_sensors() == 3);
  for (double v : p.traffic.data()) CHECK(v == 400.0);
}

TEST_CASE("noiseless uncoupled series repeat every 168 hours", "[synthetic]") {
  auto p = generate(quiet());
  for (std::size_t r = 0; r + 168 < p.n_times(); ++r)
    for (std::size_t s = 0; s < 3; ++s) REQUIRE(p.traffic(r + 168, s) == p.traffic(r, s));
  // but not every 24 hours, since the weekly term is on
  CHECK(p.traffic(24, 0) != p.traffic(0, 0));
}

TEST_CASE("generation is seed deterministic", "[synthetic]") {
  SynthConfig c;
  c.n_days = 16;
  auto a = generate(c), b = generate(c);
  CHECK(a.traffic == b.traffic);
  CHECK(a.weather == b.weather);
  CHECK(a.time_index == b.time_index);
  c.seed = 1;
  CHECK(!(generate(c).traffic == a.traffic));
}

TEST_CASE("generated panels are valid and clamped", "[synthetic]") {
  SynthConfig c;
  c.n_days = 16;
  c.noise_std = 400.0;
  auto p = generate(c);
  CHECK_NOTHROW(p.validate(false));
  CHECK(std::any_of(p.traffic.data().begin(), p.traffic.data().end(), [](double v) { return v == 0.0; }));
  CHECK(p.sensors[0].id == "s00");
  CHECK(format_iso_hour(p.time_index.front()) == "2019-01-07T00:00");
  CHECK(day_of_week(p.time_index.front()) == 0);
}

TEST_CASE("coupling validation", "[synthetic][error]") {
  SynthConfig c;
  c.coupling = "matrix";
  c.sensors = 2;
  c.coupling_matrix = {{0.0, 1.0}, {1.0, 0.0}};
  CHECK_THROWS_AS(generate(c), ConfigError);
  c.coupling_matrix = {{0.0, 0.9}, {0.9, 0.0}};
  CHECK_NOTHROW(c.validate());
  c.coupling_matrix = {{0.6, 0.6}, {0.0, 0.0}};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.coupling = "spiral";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  SynthConfig short_run;
  short_run.n_days = 15;
  CHECK_THROWS_AS(generate(short_run), ConfigError);
  CHECK(spectral_radius({{0.5, 0.0}, {0.0, -0.7}}) == Approx(0.7));
}

TEST_CASE("driver coupling makes followers track sensor 0 one hour later", "[synthetic]") {
  SynthConfig c;
  c.n_days = 30;
  c.coupling = "driver";
  c.coupling_strength = 0.8;
  c.driver_noise_std = 150.0;
  auto p = generate(c);
  auto corr = [&](std::size_t a, std::size_t b, std::size_t lag) {
    const auto n = p.n_times() - lag;
    double ma = 0, mb = 0;
    for (std::size_t r = 0; r < n; ++r) ma += p.traffic(r, a), mb += p.traffic(r + lag, b);
    ma /= n, mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t r = 0; r < n; ++r) {
      const double x = p.traffic(r, a) - ma, y = p.traffic(r + lag, b) - mb;
      sab += x * y, saa += x * x, sbb += y * y;
    }
    return sab / std::sqrt(saa * sbb);
  };
  CHECK(corr(0, 3, 1) > corr(3, 0, 1));
}

TEST_CASE("panel CSV round trip", "[synthetic][csv]") {
  SynthConfig c;
  c.n_days = 16;
  auto p = generate(c);
  const auto dir = std::filesystem::temp_directory_path() / "crann_synth_csv";
  std::filesystem::remove_all(dir);
  auto files = write_panel(p, dir);
  auto back = read_panel(files);
  CHECK(back.time_index == p.time_index);
  CHECK(back.traffic == p.traffic);
  CHECK(back.weather == p.weather);
  REQUIRE(back.sensors.size() == p.sensors.size());
  CHECK(back.sensors[2].latitude == p.sensors[2].latitude);
  std::filesystem::remove_all(dir);
}

TEST_CASE("seasonal naive is exact on noiseless uncoupled data", "[synthetic][pipeline]") {
  auto p = generate(quiet(4));
  WindowConfig w{168, 24, 24, 4, 168};
  auto data = fixtures::dataset_from(p, w);
  SeasonalNaiveForecaster naive(24, 168);
  auto all = fixtures::iota(0, data.size());
  auto m = evaluate(naive, data, all);
  CHECK(m.wmape == Approx(0.0).margin(1e-9));
  CHECK(m.rmse == Approx(0.0).margin(1e-9));
  PersistenceForecaster persistence(24);
  CHECK(evaluate(persistence, data, all).wmape > 1.0);
}
