#include <catch_amalgamated.hpp>

#include <numeric>
#include <sstream>

#include "crann/dataset.hpp"
#include "crann/error.hpp"
#include "crann/rng.hpp"

using namespace crann;
using Catch::Approx;

namespace {

HourIndex hour_of(const char* iso) { return floor_hour(*parse_iso_minutes(iso)); }

Panel make_panel(std::size_t n, std::size_t S, HourIndex start = 0, double base = 100.0) {
  Panel p;
  p.time_index.resize(n);
  std::iota(p.time_index.begin(), p.time_index.end(), start);
  for (std::size_t s = 0; s < S; ++s) p.sensors.push_back({"s" + std::to_string(s), 0.0, 0.0});
  p.traffic = Matrix(n, S);
  p.weather = Matrix(n, kWeatherChannels);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t s = 0; s < S; ++s) p.traffic(r, s) = base + static_cast<double>((r * 7 + s * 13) % 97);
    for (std::size_t c = 0; c < kWeatherChannels; ++c) p.weather(r, c) = static_cast<double>((r + c) % 11);
  }
  return p;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), 0);
  return r;
}

}  // namespace

TEST_CASE("timestamps parse and format on the hourly grid", "[dataset][time]") {
  auto m = parse_iso_minutes("2019-01-07T08:45");
  REQUIRE(m);
  CHECK(format_iso_hour(floor_hour(*m)) == "2019-01-07T08:00");
  CHECK(day_of_week(floor_hour(*m)) == 0);  // a Monday
  CHECK(hour_of_day(floor_hour(*m)) == 8);
  CHECK(parse_iso_minutes("2019-01-07 08:45:00Z") == m);
  CHECK_FALSE(parse_iso_minutes("2019-02-30T00:00"));
  CHECK_FALSE(parse_iso_minutes("yesterday"));
  CHECK(day_of_week(0) == 3);
}

TEST_CASE("quarter-hour readings group into one hour", "[dataset][ingest]") {
  std::istringstream in(
      "timestamp,sensor_id,intensity\n"
      "2019-01-07T08:00,A,400\n"
      "2019-01-07T08:15,A,440\n"
      "2019-01-07T08:30,A,420\n"
      "2019-01-07T08:45,A,460\n");
  auto raw = ingest_traffic(in);
  REQUIRE(raw.hours.size() == 1);
  REQUIRE(raw.hours["A"].size() == 1);
  CHECK(raw.hours["A"].begin()->second.size() == 4);

  auto panel = aggregate_hourly(raw);
  REQUIRE(panel.n_times() == 1);
  CHECK(panel.traffic(0, 0) == 430.0);
  CHECK(panel.time_index[0] == hour_of("2019-01-07T08:00"));
}

TEST_CASE("ingestion edge cases", "[dataset][ingest]") {
  std::istringstream empty("");
  CHECK(ingest_traffic(empty).empty());

  std::istringstream bad("timestamp,sensor_id,intensity\n2019-01-07T08:00,A,400\n2019-01-07T09:00,A,abc\n");
  try {
    ingest_traffic(bad);
    FAIL("expected an ingestion error");
  } catch (const IngestionError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }

  std::istringstream dup("timestamp,sensor_id,intensity\n2019-01-07T08:00,A,400\n2019-01-07T08:00,A,410\n");
  CHECK_THROWS_AS(ingest_traffic(dup), IngestionError);

  std::istringstream unknown("timestamp,sensor_id,intensity\n2019-01-07T08:00,B,400\n");
  CHECK_THROWS_AS(ingest_traffic(unknown, {"A"}), IngestionError);
  std::istringstream unknown2("timestamp,sensor_id,intensity\n2019-01-07T08:00,B,400\n");
  CHECK_NOTHROW(ingest_traffic(unknown2));

  std::istringstream header("time,sensor,value\n");
  CHECK_THROWS_AS(ingest_traffic(header), IngestionError);
}

TEST_CASE("hourly aggregation marks empty hours missing", "[dataset][aggregate]") {
  std::istringstream in(
      "timestamp,sensor_id,intensity\n"
      "2019-01-07T08:10,A,100\n"
      "2019-01-07T10:00,A,300\n"
      "2019-01-07T10:30,A,500\n");
  auto panel = aggregate_hourly(ingest_traffic(in));
  REQUIRE(panel.n_times() == 3);
  CHECK(panel.traffic(0, 0) == 100.0);
  CHECK(is_missing(panel.traffic(1, 0)));
  CHECK(panel.traffic(2, 0) == 400.0);
  CHECK(panel.has_missing());
}

TEST_CASE("weather and sensor files", "[dataset][ingest]") {
  std::istringstream w(
      "timestamp,temperature,solar_radiation,wind_speed,wind_direction,rainfall,pressure,humidity,uv\n"
      "2019-01-07T08:00,5.5,100,2,180,0,1013,80,1\n");
  auto weather = ingest_weather(w);
  REQUIRE(weather.size() == 1);
  CHECK(weather.begin()->second[5] == 1013.0);

  std::istringstream s("sensor_id,longitude,latitude\nA,-3.7,40.4\nB,-3.6,40.5\n");
  auto sensors = ingest_sensors(s);
  REQUIRE(sensors.size() == 2);
  CHECK(sensors[1].latitude == 40.5);

  std::istringstream d("sensor_id,longitude,latitude\nA,-3.7,40.4\nA,-3.6,40.5\n");
  CHECK_THROWS_AS(ingest_sensors(d), IngestionError);
}

TEST_CASE("imputation uses sensor, hour and weekday means", "[dataset][impute]") {
  const auto monday8 = hour_of("2019-01-07T08:00");
  Panel p = make_panel(3 * 168, 1, monday8 - 8);
  p.traffic(8, 0) = 500.0;
  p.traffic(8 + 168, 0) = kMissing;
  p.traffic(8 + 336, 0) = 700.0;
  auto out = impute_missing(p);
  CHECK(out.traffic(8 + 168, 0) == 600.0);
  CHECK_FALSE(out.has_missing());

  SECTION("no missing cells leaves the panel unchanged") {
    auto clean = make_panel(200, 2);
    CHECK(impute_missing(clean).traffic == clean.traffic);
  }
  SECTION("a single observation fills every gap") {
    Panel q = make_panel(50, 1);
    for (std::size_t r = 0; r < 50; ++r) q.traffic(r, 0) = kMissing;
    q.traffic(17, 0) = 42.0;
    auto f = impute_missing(q);
    for (std::size_t r = 0; r < 50; ++r) CHECK(f.traffic(r, 0) == 42.0);
  }
  SECTION("an empty sensor is an ingestion error") {
    Panel q = make_panel(50, 2);
    for (std::size_t r = 0; r < 50; ++r) q.traffic(r, 1) = kMissing;
    CHECK_THROWS_AS(impute_missing(q), IngestionError);
  }
}

TEST_CASE("imputation is idempotent", "[dataset][impute][property]") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Panel p = make_panel(400, 3, static_cast<HourIndex>(rng.index(10000)));
    for (std::size_t r = 0; r < 400; ++r)
      for (std::size_t s = 0; s < 3; ++s)
        if (rng.uniform(0, 1) < 0.2) p.traffic(r, s) = kMissing;
    for (std::size_t r = 0; r < 400; ++r)
      if (rng.uniform(0, 1) < 0.1) p.weather(r, 2) = kMissing;
    auto once = impute_missing(p);
    auto twice = impute_missing(once);
    CHECK(once.traffic == twice.traffic);
    CHECK(once.weather == twice.weather);
  }
}

TEST_CASE("exclusion ranges blank traffic", "[dataset][impute]") {
  Panel p = make_panel(48, 2);
  apply_exclusions(p, {{10, 12}});
  CHECK(is_missing(p.traffic(10, 0)));
  CHECK(is_missing(p.traffic(12, 1)));
  CHECK_FALSE(is_missing(p.traffic(13, 0)));
  CHECK_THROWS_AS(apply_exclusions(p, {{5, 4}}), ConfigError);
}

TEST_CASE("min-max normalization", "[dataset][normalize]") {
  Panel p = make_panel(1001, 1);
  for (std::size_t r = 0; r < 1001; ++r) p.traffic(r, 0) = static_cast<double>(r);
  auto params = fit_minmax(p, all_rows(1001));
  CHECK(params.apply(0, 500.0) == 0.5);
  CHECK(params.apply(0, 0.0) == 0.0);
  CHECK(params.apply(0, 1000.0) == 1.0);
  CHECK(params.apply(0, 1200.0) == Approx(1.2).epsilon(1e-15));

  SECTION("train rows only") {
    std::vector<std::size_t> rows{10, 20};
    auto q = fit_minmax(p, rows);
    CHECK(q.traffic[0].min == 10.0);
    CHECK(q.traffic[0].max == 20.0);
  }
  SECTION("constant series names the sensor") {
    Panel c = make_panel(10, 2);
    for (std::size_t r = 0; r < 10; ++r) c.traffic(r, 1) = 5.0;
    try {
      fit_minmax(c, all_rows(10));
      FAIL("expected a normalization error");
    } catch (const NormalizationError& e) {
      CHECK(std::string(e.what()).find("'s1'") != std::string::npos);
    }
  }
  SECTION("json round trip keyed by sensor id") {
    auto j = params.to_json();
    CHECK(j["traffic"]["s0"]["max"] == 1000.0);
    auto back = NormalizationParams::from_json(j);
    CHECK(back.traffic[0].min == params.traffic[0].min);
    CHECK(back.weather[3].max == params.weather[3].max);
  }
}

TEST_CASE("normalization round trip", "[dataset][normalize][property]") {
  Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    MinMax mm{rng.uniform(-1000, 1000), 0.0};
    mm.max = mm.min + rng.uniform(1e-3, 5000);
    const double x = rng.uniform(-1e4, 1e4);
    CHECK(std::abs(mm.invert(mm.apply(x)) - x) <= 1e-9 * std::max(1.0, std::abs(x)));
  }
}

TEST_CASE("spot sample counts", "[dataset][window]") {
  auto count = [](std::size_t n) {
    Panel p = make_panel(n, 2);
    auto params = fit_minmax(p, all_rows(n));
    return make_spot_samples(p, params);
  };
  CHECK(count(360).size() == 1);
  auto two = count(361);
  REQUIRE(two.size() == 2);
  CHECK(two[1].origin - two[0].origin == 1);
  CHECK_THROWS_AS(count(359), WindowingError);
}

TEST_CASE("spot sample alignment", "[dataset][window][property]") {
  const std::size_t n = 420, S = 3;
  Panel p = make_panel(n, S, 5000);
  auto params = fit_minmax(p, all_rows(n));
  SpotDataset data(p, params, {});
  REQUIRE(data.size() == n - 360 + 1);
  for (std::size_t i = 0; i < data.size(); i += 7) {
    auto s = data.sample(i);
    const auto r0 = static_cast<std::size_t>(s.origin - p.time_index.front());
    REQUIRE(s.temporal_input.size() == 336);
    REQUIRE(s.spatial_input.rows() == 24);
    for (std::size_t h = 0; h < 24; ++h) {
      for (std::size_t c = 0; c < S; ++c) CHECK(s.target(h, c) == params.apply(c, p.traffic(r0 + h, c)));
      for (std::size_t c = 0; c < kWeatherChannels; ++c)
        CHECK(s.exog(h, c) == params.weather[c].apply(p.weather(r0 + h, c)));
    }
    for (std::size_t a = 0; a < 4; ++a)
      for (std::size_t c = 0; c < S; ++c) CHECK(s.ar_terms(a, c) == params.apply(c, p.traffic(r0 - 1 - a, c)));
    for (std::size_t l = 0; l < 24; ++l) CHECK(s.spatial_input(l, 1) == params.apply(1, p.traffic(r0 - 24 + l, 1)));
    double mean = 0.0;
    for (std::size_t c = 0; c < S; ++c) mean += params.apply(c, p.traffic(r0 - 1, c));
    CHECK(s.temporal_input.back() == Approx(mean / S).epsilon(1e-14));
    CHECK(data.sample_at(s.origin) == i);
  }

  std::vector<std::size_t> idx{0, 5, 60};
  auto batch = make_batch(data, idx);
  CHECK(batch.temporal.shape() == Shape{3, 336});
  CHECK(batch.spatial.shape() == Shape{3, 24, S});
  CHECK(batch.ar.shape() == Shape{3, 4, S});
  CHECK(batch.exog.shape() == Shape{3, 24, 8});
  CHECK(batch.target.shape() == Shape{3, 24, S});
  CHECK(batch.history.shape() == Shape{3, 336, S});
  auto s5 = data.sample(5);
  CHECK(batch.target.values()[(1 * 24 + 23) * S + 2] == s5.target(23, 2));
  CHECK(batch.history.values()[(1 * 336 + 335) * S + 0] == s5.ar_terms(0, 0));
}

TEST_CASE("blocked k-fold basics", "[dataset][folds]") {
  auto plan = blocked_kfold(10, 10, 0);
  REQUIRE(plan.folds.size() == 10);
  for (std::size_t f = 0; f < 10; ++f) {
    CHECK(plan.folds[f].test == std::vector<std::size_t>{f});
    CHECK(plan.folds[f].train.size() == 9);
  }
  CHECK_THROWS_AS(blocked_kfold(100, 10, 10), PlanningError);
  CHECK_THROWS_AS(blocked_kfold(100, 0, 1), PlanningError);

  auto full = blocked_kfold(17000, 10, 360);
  std::vector<char> seen(17000, 0);
  for (const auto& f : full.folds) {
    CHECK_FALSE(f.validation.empty());
    for (auto o : f.test) {
      CHECK_FALSE(seen[o]);
      seen[o] = 1;
    }
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](char c) { return c == 1; }));

  auto back = FoldPlan::from_json(full.to_json());
  CHECK(back.folds[3].train == full.folds[3].train);
  CHECK(back.gap == 360);
}

TEST_CASE("blocked k-fold is leakage free", "[dataset][folds][property]") {
  Rng rng(2024);
  int plans = 0;
  while (plans < 50) {
    const auto k = 2 + rng.index(9);
    const auto gap = rng.index(30);
    const auto n = k * (gap + 1) + rng.index(300);
    FoldPlan plan;
    try {
      plan = blocked_kfold(n, k, gap, rng.uniform(0.0, 0.5));
    } catch (const PlanningError&) {
      continue;  // legitimately too tight once validation blocks are carved out
    }
    ++plans;
    for (const auto& f : plan.folds) {
      for (auto o : f.test)
        for (auto t : f.train) REQUIRE((o > t ? o - t : t - o) > gap);
      for (auto o : f.validation) {
        for (auto t : f.test) REQUIRE((o > t ? o - t : t - o) > gap);
        REQUIRE(std::find(f.train.begin(), f.train.end(), o) == f.train.end());
      }
      CHECK(min_separation(f.test, f.train) > gap);
    }
  }
}
