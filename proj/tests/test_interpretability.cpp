#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "crann/error.hpp"
#include "crann/interpretability.hpp"
#include "crann/synthetic.hpp"
#include "fixtures.hpp"

using namespace crann;
using Catch::Approx;

namespace {

CrannConfig small_config() {
  CrannConfig c;
  c.temporal.lookback = 24;
  c.temporal.horizon = c.spatial.lags = c.spatial.horizon = 6;
  c.temporal.hidden = c.temporal.attention = 4;
  c.spatial.channels = {4};
  return c;
}

struct Setup {
  SpotDataset data;
  CrannModel model;

  explicit Setup(std::uint64_t seed = 0)
      : data(make_data(seed)), model(small_config(), build_grid(data.params().sensor_ids), Rng(seed)) {}

  static SpotDataset make_data(std::uint64_t seed) {
    SynthConfig c;
    c.sensors = 4;
    c.n_days = 16;
    c.seed = seed;
    return fixtures::dataset_from(generate(c), WindowConfig{24, 6, 6, 4, 24});
  }
};

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (auto& x : m.data()) x = rng.uniform(-1.0, 1.0);
  return m;
}

}  // namespace

TEST_CASE("temporal summary of one sample is that sample's map", "[interpretability][temporal]") {
  Setup s;
  const std::vector<std::size_t> one{7};
  auto summary = temporal_attention_summary(s.model, s.data, one);
  NoGradGuard guard;
  auto att = s.model.temporal.forward(make_batch(s.data, one).temporal, false).attention;
  REQUIRE(summary.rows() == 6);
  REQUIRE(summary.cols() == 24);
  for (std::size_t k = 0; k < summary.data().size(); ++k) CHECK(summary.data()[k] == att.values()[k]);
}

TEST_CASE("temporal summary rows stay on the simplex", "[interpretability][temporal]") {
  Setup s(1);
  auto summary = temporal_attention_summary(s.model, s.data, fixtures::iota(0, 50), 16);
  for (std::size_t i = 0; i < summary.rows(); ++i) {
    double total = 0.0;
    for (auto v : summary.row(i)) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(total == Approx(1.0).margin(1e-6));
  }
  CHECK_THROWS_AS(temporal_attention_summary(s.model, s.data, std::vector<std::size_t>{}), ContractError);
}

TEST_CASE("seasonal lag weight of uniform attention is the uniform share", "[interpretability][temporal]") {
  Matrix uniform(24, 336, 1.0 / 336.0);
  CHECK(seasonal_lag_weight(uniform) == Approx(1.0 / 336.0).epsilon(1e-12));

  // all mass on the congruent lags
  Matrix peaked(3, 48, 0.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 48; ++j)
      if ((i + 48 - j) % 24 == 0) peaked(i, j) = 0.5;
  CHECK(seasonal_lag_weight(peaked) == Approx(0.5));
}

TEST_CASE("untrained spatial attention is uniform", "[interpretability][spatial]") {
  Setup s;
  auto summary = spatial_attention_summary(s.model, s.data, fixtures::iota(0, 20));
  const auto S = s.data.n_sensors();
  REQUIRE(summary.sensor_ids == s.data.params().sensor_ids);
  for (auto v : summary.pairwise.data()) CHECK(v == Approx(1.0 / S).margin(1e-12));
  for (auto v : summary.per_sensor) CHECK(v == Approx(1.0 / S).margin(1e-12));
  CHECK_THROWS_AS(spatial_attention_summary(s.model, s.data, std::vector<std::size_t>{}), ContractError);
}

TEST_CASE("spatial summary rows sum to one after perturbing the attention weights", "[interpretability][spatial]") {
  Setup s(2);
  Rng rng(9);
  for (auto& w : s.model.spatial.w_att.mutable_values()) w = rng.normal(0.0, 2.0);
  auto summary = spatial_attention_summary(s.model, s.data, fixtures::iota(10, 30), 7);
  const auto S = s.data.n_sensors();
  double per_sensor_total = 0.0;
  for (std::size_t j = 0; j < S; ++j) {
    double total = 0.0;
    for (auto v : summary.pairwise.row(j)) total += v;
    CHECK(total == Approx(1.0).margin(1e-6));
  }
  for (auto v : summary.per_sensor) per_sensor_total += v;
  CHECK(per_sensor_total == Approx(1.0).margin(1e-6));
}

TEST_CASE("shapley on an affine map matches the additive closed form", "[interpretability][shapley]") {
  Rng rng(4);
  const std::size_t F = 7, O = 3;
  const auto W = fixtures::random_tensor({O, F}, rng);
  const auto b = fixtures::random_tensor({O}, rng);
  const auto background = random_matrix(40, F, rng);
  const auto explain = random_matrix(5, F, rng);
  const std::vector<FeatureGroup> groups{{"a", {0, 3}}, {"b", {1}}, {"c", {2, 4, 5}}, {"d", {6}}};
  auto fn = [&](const Tensor& x) { return linear(x, W, b); };
  ShapleyConfig cfg;
  cfg.permutations = 200;
  cfg.seed = 11;
  auto rep = shapley_mc(fn, background, explain, groups, cfg);

  std::vector<double> mean(F, 0.0);
  for (std::size_t r = 0; r < background.rows(); ++r)
    for (std::size_t f = 0; f < F; ++f) mean[f] += background(r, f) / background.rows();
  REQUIRE(rep.groups == std::vector<std::string>{"a", "b", "c", "d"});
  REQUIRE(rep.outputs == O);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    double expected = 0.0;
    for (std::size_t n = 0; n < explain.rows(); ++n)
      for (std::size_t o = 0; o < O; ++o) {
        double phi = 0.0;
        for (auto f : groups[g].indices) phi += W[o * F + f] * (explain(n, f) - mean[f]);
        expected += std::abs(phi);
      }
    expected /= static_cast<double>(explain.rows() * O);
    CHECK(rep.mean_abs[g] == Approx(expected).epsilon(0.02));
  }
}

TEST_CASE("shapley gives exactly zero to an ignored group", "[interpretability][shapley]") {
  Rng rng(5);
  const std::size_t F = 4;
  // the output ignores feature 2 and mixes the others non-linearly
  auto fn = [](const Tensor& x) {
    const auto N = x.dim(0);
    std::vector<double> y(N);
    for (std::size_t n = 0; n < N; ++n) y[n] = std::sin(x[n * 4]) * x[n * 4 + 1] + x[n * 4 + 3] * x[n * 4 + 3];
    return Tensor::from({N, 1}, y);
  };
  const std::vector<FeatureGroup> groups{{"x0", {0}}, {"x1", {1}}, {"x2", {2}}, {"x3", {3}}};
  for (std::string background : {"mean", "sample"}) {
    ShapleyConfig cfg;
    cfg.permutations = 25;
    cfg.background = background;
    auto rep = shapley_mc(fn, random_matrix(10, F, rng), random_matrix(4, F, rng), groups, cfg);
    CHECK(rep.mean_abs[2] == 0.0);
    for (auto v : rep.mean_abs) CHECK(v >= 0.0);
  }
}

TEST_CASE("shapley is deterministic for a fixed seed", "[interpretability][shapley]") {
  Setup s(3);
  Rng rng(1);
  for (auto& w : s.model.dense.weight.mutable_values()) w = rng.normal(0.0, 0.1);
  ShapleyConfig cfg;
  cfg.permutations = 8;
  cfg.seed = 21;
  cfg.background = "sample";
  auto a = explain_dense(s.model, s.data, fixtures::iota(0, 40), fixtures::iota(60, 3), cfg);
  auto b = explain_dense(s.model, s.data, fixtures::iota(0, 40), fixtures::iota(60, 3), cfg);
  CHECK(a.mean_abs == b.mean_abs);
  cfg.seed = 22;
  auto c = explain_dense(s.model, s.data, fixtures::iota(0, 40), fixtures::iota(60, 3), cfg);
  CHECK(a.mean_abs != c.mean_abs);
}

TEST_CASE("dense attribution groups follow the feature layout", "[interpretability][shapley]") {
  Setup s;
  ShapleyConfig cfg;
  cfg.permutations = 2;
  auto rep = explain_dense(s.model, s.data, fixtures::iota(0, 10), fixtures::iota(20, 2), cfg);
  std::vector<std::string> expected{"Mean"};
  for (const auto& id : s.data.params().sensor_ids) expected.push_back("Sensor_" + id);
  for (int k = 1; k <= 4; ++k) expected.push_back("AR_t-" + std::to_string(k));
  for (const auto& w : kWeatherNames) expected.push_back(w);
  CHECK(rep.groups == expected);
  CHECK(rep.outputs == 6 * s.data.n_sensors());
  CHECK_THROWS_AS(explain_dense(s.model, s.data, std::vector<std::size_t>{}, fixtures::iota(0, 2), cfg),
                  ContractError);
}

TEST_CASE("shapley preconditions", "[interpretability][shapley][error]") {
  auto fn = [](const Tensor& x) { return x; };
  const std::vector<FeatureGroup> groups{{"a", {0}}};
  ShapleyConfig cfg;
  CHECK_THROWS_AS(shapley_mc(fn, Matrix(0, 1), Matrix(1, 1), groups, cfg), ContractError);
  CHECK_THROWS_AS(shapley_mc(fn, Matrix(2, 1), Matrix(1, 2), groups, cfg), DimensionError);
  CHECK_THROWS_AS(shapley_mc(fn, Matrix(2, 1), Matrix(1, 1), {{"b", {3}}}, cfg), DimensionError);
  cfg.permutations = 0;
  CHECK_THROWS_AS(shapley_mc(fn, Matrix(2, 1), Matrix(1, 1), groups, cfg), ConfigError);
  CHECK_THROWS_AS(ShapleyConfig::from_json({{"background", "median"}}), ConfigError);
  CHECK(ShapleyConfig::from_json(ShapleyConfig{}.to_json()).permutations == 100);
}

TEST_CASE("explanation CSV layouts", "[interpretability][csv]") {
  Matrix t(2, 3, 0.25);
  std::ostringstream temporal;
  write_temporal_csv(temporal, t);
  CHECK(temporal.str().rfind("horizon,t-3,t-2,t-1\nt+0,0.25,0.25,0.25\n", 0) == 0);

  SpatialAttentionSummary s{{"a", "b"}, Matrix(2, 2, 0.5), {0.5, 0.5}};
  std::ostringstream pairwise, per_sensor;
  write_pairwise_csv(pairwise, s);
  write_per_sensor_csv(per_sensor, s);
  CHECK(pairwise.str() == "target,a,b\na,0.5,0.5\nb,0.5,0.5\n");
  CHECK(per_sensor.str() == "sensor_id,mean_attention\na,0.5\nb,0.5\n");

  AttributionReport r;
  r.groups = {"Mean", "rainfall"};
  r.mean_abs = {0.125, 0.0};
  std::ostringstream attribution;
  write_attribution_csv(attribution, r);
  CHECK(attribution.str() == "group,mean_abs_shap\nMean,0.125\nrainfall,0\n");
  CHECK(r.to_json()["groups"][0]["group"] == "Mean");
}
