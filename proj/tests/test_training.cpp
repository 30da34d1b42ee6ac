#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "crann/baselines.hpp"
#include "crann/crann.hpp"
#include "crann/error.hpp"
#include "crann/synthetic.hpp"
#include "crann/training.hpp"
#include "fixtures.hpp"

using namespace crann;
using Catch::Approx;

namespace {

// y = w * (first weather channel) + b, for a single sensor.
class LinearExog : public Forecaster {
 public:
  LinearExog() {
    w = Tensor::from({1, 1}, {0.1}, true);
    b = Tensor::from({1}, {0.0}, true);
    params_.add("w", w);
    params_.add("b", b);
  }
  std::string kind() const override { return "linear_exog"; }
  Tensor forward(const Batch& batch, bool) override {
    ++calls;
    sizes.push_back(batch.size);
    return linear(slice(batch.exog, 2, 0, 1), w, b);
  }
  ParameterSet& parameters() override { return params_; }
  nlohmann::json config() const override { return nlohmann::json::object(); }
  nlohmann::json architecture() const override { return nlohmann::json::object(); }

  Tensor w, b;
  std::size_t calls = 0;
  std::vector<std::size_t> sizes;

 private:
  ParameterSet params_;
};

// Goes non-finite once its training-call budget is spent.
class Diverging : public LinearExog {
 public:
  explicit Diverging(std::size_t budget) : budget_(budget) {}
  Tensor forward(const Batch& batch, bool training) override {
    auto y = LinearExog::forward(batch, training);
    if (training && budget_-- == 0) return scale(y, std::numeric_limits<double>::quiet_NaN());
    return y;
  }

 private:
  std::size_t budget_;
};

// Returns a fixed normalized value everywhere.
class Constant : public Forecaster {
 public:
  explicit Constant(std::vector<double> per_sensor) : v_(std::move(per_sensor)) {}
  std::string kind() const override { return "constant"; }
  Tensor forward(const Batch& batch, bool) override {
    const auto T = batch.target.dim(1), S = batch.target.dim(2);
    std::vector<double> out(batch.size * T * S);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v_[i % S];
    return Tensor::from({batch.size, T, S}, out);
  }
  ParameterSet& parameters() override { return params_; }
  nlohmann::json config() const override { return nlohmann::json::object(); }
  nlohmann::json architecture() const override { return nlohmann::json::object(); }

 private:
  std::vector<double> v_;
  ParameterSet params_;
};

// traffic = 3 * temperature + 5 on one sensor, random weather
Panel linear_panel(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Panel p;
  p.sensors = {{"only", 0.0, 0.0}};
  p.traffic = Matrix(n, 1);
  p.weather = Matrix(n, kWeatherChannels);
  for (std::size_t r = 0; r < n; ++r) {
    p.time_index.push_back(static_cast<HourIndex>(430000 + r));
    for (std::size_t c = 0; c < kWeatherChannels; ++c) p.weather(r, c) = rng.uniform(0.0, 10.0);
    p.traffic(r, 0) = 3.0 * p.weather(r, 0) + 5.0;
  }
  return p;
}

const WindowConfig kTinyWindow{4, 2, 1, 1, 4};

Fold contiguous_fold(std::size_t n_train, std::size_t n_val, std::size_t n_test = 0) {
  return {fixtures::iota(0, n_train), fixtures::iota(n_train, n_val), fixtures::iota(n_train + n_val, n_test)};
}

CrannConfig tiny_crann(std::size_t lookback, std::size_t horizon) {
  CrannConfig c;
  c.temporal.lookback = lookback;
  c.temporal.horizon = c.spatial.lags = c.spatial.horizon = horizon;
  c.temporal.hidden = c.temporal.attention = 4;
  c.spatial.channels = {4};
  return c;
}

SpotDataset small_synthetic(const WindowConfig& w, std::uint64_t seed = 0) {
  SynthConfig c;
  c.sensors = 3;
  c.n_days = 16;
  c.seed = seed;
  return fixtures::dataset_from(generate(c), w);
}

}  // namespace

TEST_CASE("train config validation and JSON", "[training][config]") {
  TrainConfig c;
  CHECK(c.batch_size == 64);
  CHECK(c.initial_lr == 0.01);
  CHECK(c.effective_decay_patience() == 5);
  auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK_THROWS_AS(TrainConfig::from_json({{"batch_size", 0}}), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json({{"decay_factor", 1.0}}), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json({{"mode", "staged"}}), ConfigError);
}

TEST_CASE("patience 0 runs exactly one epoch", "[training]") {
  auto data = fixtures::dataset_from(linear_panel(120, 1), kTinyWindow);
  LinearExog m;
  TrainConfig cfg;
  cfg.patience = 0;
  auto rep = train(m, data, contiguous_fold(80, 20), cfg);
  CHECK(rep.epochs.size() == 1);
  CHECK(rep.stopping_epoch == 1);
  CHECK(rep.best_epoch == 1);
}

TEST_CASE("batches drop only a lone trailing sample", "[training][batches]") {
  auto data = fixtures::dataset_from(linear_panel(300, 2), kTinyWindow);
  TrainConfig cfg;
  cfg.max_epochs = 1;
  {
    LinearExog m;
    train(m, data, contiguous_fold(129, 10), cfg);
    // two training batches of 64, then one validation batch
    CHECK(m.sizes == std::vector<std::size_t>{64, 64, 10});
  }
  {
    LinearExog m;
    train(m, data, contiguous_fold(130, 10), cfg);
    CHECK(m.sizes == std::vector<std::size_t>{64, 64, 2, 10});
  }
}

TEST_CASE("noiseless linear data recovers slope and intercept", "[training][regression]") {
  auto panel = linear_panel(400, 3);
  auto data = fixtures::dataset_from(panel, kTinyWindow);
  auto fold = contiguous_fold(300, 80);
  // least-squares oracle on the normalized training pairs
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (auto i : fold.train) {
    const auto r = data.origin_row(i);
    const double x = data.normalized_weather()(r, 0), y = data.normalized_traffic()(r, 0);
    sx += x, sy += y, sxx += x * x, sxy += x * y;
  }
  const double n = static_cast<double>(fold.train.size());
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx), intercept = (sy - slope * sx) / n;

  LinearExog m;
  TrainConfig cfg;
  cfg.max_epochs = 600;
  cfg.patience = 30;
  train(m, data, fold, cfg);
  CHECK(m.w[0] == Approx(slope).margin(1e-3));
  CHECK(m.b[0] == Approx(intercept).margin(1e-3));
}

TEST_CASE("identical seeds give bit-identical parameters", "[training][determinism]") {
  WindowConfig w{24, 6, 6, 4, 24};
  auto data = small_synthetic(w);
  auto fold = contiguous_fold(120, 40);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.seed = 11;
  auto grid = build_grid(data.params().sensor_ids);
  CrannModel a(tiny_crann(24, 6), grid, Rng(5)), b(tiny_crann(24, 6), grid, Rng(5));
  auto ra = train(a, data, fold, cfg);
  auto rb = train(b, data, fold, cfg);
  CHECK(a.parameters().snapshot() == b.parameters().snapshot());
  CHECK(ra.validation_curve() == rb.validation_curve());
}

TEST_CASE("early stopping restores the best validation parameters", "[training][restore]") {
  WindowConfig w{24, 6, 6, 4, 24};
  auto data = small_synthetic(w, 4);
  auto fold = contiguous_fold(96, 30);
  TrainConfig cfg;
  cfg.max_epochs = 12;
  cfg.patience = 3;
  cfg.initial_lr = 0.05;
  CrannModel m(tiny_crann(24, 6), build_grid(data.params().sensor_ids), Rng(6));
  auto rep = train(m, data, fold, cfg);
  const auto curve = rep.validation_curve();
  const double best = *std::min_element(curve.begin(), curve.end());
  CHECK(rep.best_validation_loss == best);
  CHECK(curve[rep.best_epoch - 1] == best);
  CHECK(validation_loss(m, data, fold.validation) == best);
  auto j = rep.to_json();
  CHECK(j["epochs"].size() == curve.size());
  CHECK(j.contains("seconds"));
}

TEST_CASE("training loss falls on a tiny dataset", "[training][property]") {
  WindowConfig w{24, 6, 6, 4, 24};
  auto data = small_synthetic(w, 7);
  Fold fold{fixtures::iota(0, 8), fixtures::iota(40, 4), {}};
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    TrainConfig cfg;
    cfg.max_epochs = 50;
    cfg.patience = 1000;
    cfg.batch_size = 4;
    cfg.seed = seed;
    CrannModel m(tiny_crann(24, 6), build_grid(data.params().sensor_ids), Rng(seed));
    auto curve = train(m, data, fold, cfg).train_curve();
    REQUIRE(curve.size() == 50);
    INFO("seed " << seed);
    CHECK(curve.back() < curve.front());
  }
}

TEST_CASE("divergence names the epoch", "[training][error]") {
  auto data = fixtures::dataset_from(linear_panel(120, 8), kTinyWindow);
  Diverging m(5);  // two batches per epoch: the sixth batch is in epoch 3
  TrainConfig cfg;
  cfg.batch_size = 40;
  try {
    train(m, data, contiguous_fold(80, 20), cfg);
    FAIL("no TrainingError");
  } catch (const TrainingError& e) {
    CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("epoch 3"));
  }
}

TEST_CASE("training preconditions", "[training][error]") {
  auto data = fixtures::dataset_from(linear_panel(120, 9), kTinyWindow);
  LinearExog m;
  CHECK_THROWS_AS(train(m, data, Fold{{}, {1}, {}}, TrainConfig{}), ContractError);
  CHECK_THROWS_AS(train(m, data, Fold{{1}, {}, {}}, TrainConfig{}), ContractError);
  TrainConfig pre;
  pre.mode = "pretrain";
  CHECK_THROWS_AS(train(m, data, contiguous_fold(50, 10), pre), ConfigError);
  PersistenceForecaster naive(1);
  CHECK(train(naive, data, contiguous_fold(50, 10), TrainConfig{}).epochs.empty());
}

TEST_CASE("pretraining runs each phase", "[training][pretrain]") {
  WindowConfig w{24, 6, 6, 4, 24};
  auto data = small_synthetic(w, 10);
  TrainConfig cfg;
  cfg.mode = "pretrain";
  cfg.max_epochs = 2;
  cfg.freeze_pretrained = true;
  CrannModel m(tiny_crann(24, 6), build_grid(data.params().sensor_ids), Rng(7));
  const auto temporal_before = m.phase_parameters("temporal").snapshot();
  auto rep = train(m, data, contiguous_fold(64, 16), cfg);
  CHECK(rep.train_curve("temporal").size() == 2);
  CHECK(rep.train_curve("spatial").size() == 2);
  CHECK(rep.train_curve("joint").size() == 2);
  CHECK(m.phase_parameters("temporal").snapshot() != temporal_before);
  for (const auto& p : m.parameters().tensors()) CHECK(p.tensor.requires_grad());
}

TEST_CASE("evaluation in vehicles per hour", "[training][evaluate]") {
  WindowConfig w{24, 6, 6, 4, 24};
  auto data = small_synthetic(w, 12);
  auto samples = fixtures::iota(0, 50);
  SECTION("a perfect model scores zero") {
    OracleForecaster oracle;
    auto m = evaluate(oracle, data, samples);
    CHECK(m.rmse == Approx(0.0).margin(1e-9));
    CHECK(m.bias == Approx(0.0).margin(1e-9));
    CHECK(m.wmape == Approx(0.0).margin(1e-9));
  }
  SECTION("a constant zero forecast has WMAPE 100") {
    std::vector<double> zero;
    for (std::size_t s = 0; s < 3; ++s) zero.push_back(data.params().apply(s, 0.0));
    Constant c(zero);
    CHECK(evaluate(c, data, samples).wmape == Approx(100.0).epsilon(1e-12));
  }
  SECTION("normalized and denormalized metrics differ") {
    PersistenceForecaster p(6);
    const auto denorm = evaluate(p, data, samples);
    NormalizationParams unit = data.params();
    for (auto& m : unit.traffic) m = MinMax{0.0, 1.0};
    // identity constants would leave both predictions and targets normalized
    auto preds = predict(p, data, samples, unit);
    MetricAccumulator acc;
    for (std::size_t i = 0; i < samples.size(); ++i) acc.add(preds[i], data.sample(samples[i]).target);
    CHECK(acc.result().rmse != Approx(denorm.rmse));
  }
  SECTION("missing constants") {
    PersistenceForecaster p(6);
    NormalizationParams none;
    CHECK_THROWS_AS(evaluate(p, data, samples, none), ContractError);
    CHECK_THROWS_AS(evaluate(p, data, {}), ContractError);
  }
  SECTION("predictions are per-sample horizon x sensor blocks") {
    PersistenceForecaster p(6);
    auto preds = predict(p, data, fixtures::iota(3, 2));
    REQUIRE(preds.size() == 2);
    CHECK((preds[0].rows() == 6 && preds[0].cols() == 3));
    const auto row = data.origin_row(3) - 1;
    CHECK(preds[0](5, 1) == Approx(data.params().invert(1, data.normalized_traffic()(row, 1))).epsilon(1e-12));
  }
}

TEST_CASE("temporal module learns a noiseless daily sinusoid", "[training][temporal][convergence]") {
  SynthConfig c;
  c.sensors = 1;
  c.n_days = 24;
  c.weekly_amplitude = 0.0;
  c.noise_std = 0.0;
  c.coupling = "none";
  WindowConfig w{48, 24, 24, 4, 48};
  auto data = fixtures::dataset_from(generate(c), w);
  CrannConfig cfg = tiny_crann(48, 24);
  cfg.temporal.hidden = cfg.temporal.attention = 16;
  CrannModel m(cfg, build_grid(data.params().sensor_ids), Rng(3));
  const auto n = data.size();
  Fold fold{fixtures::iota(0, n - 120), fixtures::iota(n - 120, 60), fixtures::iota(n - 60, 60)};
  TrainConfig tc;
  tc.mode = "pretrain";
  tc.freeze_pretrained = true;
  tc.max_epochs = 60;
  tc.patience = 10;
  auto rep = train(m, data, fold, tc);
  auto best = rep.validation_curve("temporal");
  NoGradGuard guard;
  auto batch = make_batch(data, fold.test);
  const double held_out = mse(m.temporal.forward(batch.temporal, false).prediction, mean_axis(batch.target, 2)).item();
  INFO("temporal epochs " << best.size() << " best " << *std::min_element(best.begin(), best.end()) << " last " << best.back());
  CHECK(held_out < 1e-2);
}
