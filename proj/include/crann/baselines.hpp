#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "crann/forecaster.hpp"
#include "crann/spatial.hpp"

namespace crann {

/// 2D CNN whose channels are the input lags; a 3x3 head maps the last
/// block back to one channel per horizon step.
class CnnBaseline : public Forecaster {
 public:
  struct Config {
    std::size_t lags = 24;
    std::size_t horizon = 24;
    std::vector<std::size_t> channels{32, 32, 32, 64, 64, 64};
  };
  CnnBaseline(const Config& cfg, SensorGrid grid, const Rng& rng);

  std::string kind() const override { return "cnn"; }
  Tensor forward(const Batch& batch, bool training) override;
  ParameterSet& parameters() override { return params_; }
  nlohmann::json config() const override;
  nlohmann::json architecture() const override;

  ConvStack stack;

 private:
  Config cfg_;
  SensorGrid grid_;
  ParameterSet params_;
};

/// Stacked LSTM over the last `lookback` hours of all sensors; a linear
/// head on the final hidden state emits the whole [horizon x S] block.
class LstmBaseline : public Forecaster {
 public:
  struct Config {
    std::size_t sensors = 1;
    std::size_t lookback = 336;
    std::size_t horizon = 24;
    std::size_t hidden = 100;
    std::size_t layers = 2;
  };
  LstmBaseline(const Config& cfg, const Rng& rng);

  std::string kind() const override { return "lstm"; }
  Tensor forward(const Batch& batch, bool training) override;
  ParameterSet& parameters() override { return params_; }
  nlohmann::json config() const override;
  nlohmann::json architecture() const override;

  std::vector<LstmLayer> layers;
  Linear head;

 private:
  Config cfg_;
  ParameterSet params_;
};

/// Conv stack over the grid (channels = lags) feeding a stacked LSTM that
/// runs over the projected lags; a per-step linear head emits S values.
class CnnLstmBaseline : public Forecaster {
 public:
  struct Config {
    std::size_t lags = 24;
    std::size_t horizon = 24;
    std::vector<std::size_t> channels{32, 32, 64, 64, 64};
    std::size_t hidden = 100;
    std::size_t layers = 2;
  };
  CnnLstmBaseline(const Config& cfg, SensorGrid grid, const Rng& rng);

  std::string kind() const override { return "cnn_lstm"; }
  Tensor forward(const Batch& batch, bool training) override;
  ParameterSet& parameters() override { return params_; }
  nlohmann::json config() const override;
  nlohmann::json architecture() const override;

  ConvStack stack;
  std::vector<LstmLayer> layers;
  Linear head;

 private:
  Config cfg_;
  SensorGrid grid_;
  ParameterSet params_;
};

/// Stacked encoder-decoder. Each decoder step consumes the mean of all
/// top-layer encoder states together with the previous output.
class Seq2SeqBaseline : public Forecaster {
 public:
  struct Config {
    std::size_t sensors = 1;
    std::size_t lookback = 336;
    std::size_t horizon = 24;
    std::size_t hidden = 100;
    std::size_t layers = 2;
  };
  Seq2SeqBaseline(const Config& cfg, const Rng& rng);

  std::string kind() const override { return "seq2seq"; }
  Tensor forward(const Batch& batch, bool training) override;
  ParameterSet& parameters() override { return params_; }
  nlohmann::json config() const override;
  nlohmann::json architecture() const override;

  std::vector<LstmLayer> encoder;
  std::vector<LstmLayer> decoder;
  Linear head;

 private:
  Config cfg_;
  ParameterSet params_;
};

/// Copies the last observed hour to every horizon step.
class PersistenceForecaster : public Forecaster {
 public:
  explicit PersistenceForecaster(std::size_t horizon = 24) : horizon_(horizon) {}
  std::string kind() const override { return "persistence"; }
  Tensor forward(const Batch& batch, bool training) override;
  ParameterSet& parameters() override { return params_; }
  nlohmann::json config() const override { return {{"horizon", horizon_}}; }
  nlohmann::json architecture() const override { return {{"kind", "persistence"}, {"parameters", 0}}; }

 private:
  std::size_t horizon_;
  ParameterSet params_;
};

/// Copies the same hours one season (default 168 h) earlier.
class SeasonalNaiveForecaster : public Forecaster {
 public:
  explicit SeasonalNaiveForecaster(std::size_t horizon = 24, std::size_t period = 168)
      : horizon_(horizon), period_(period) {}
  std::string kind() const override { return "seasonal"; }
  Tensor forward(const Batch& batch, bool training) override;
  ParameterSet& parameters() override { return params_; }
  nlohmann::json config() const override { return {{"horizon", horizon_}, {"period", period_}}; }
  nlohmann::json architecture() const override {
    return {{"kind", "seasonal"}, {"period", period_}, {"parameters", 0}};
  }

 private:
  std::size_t horizon_, period_;
  ParameterSet params_;
};

/// Returns the batch target; only useful to exercise the evaluation path.
class OracleForecaster : public Forecaster {
 public:
  std::string kind() const override { return "oracle"; }
  Tensor forward(const Batch& batch, bool) override { return batch.target; }
  ParameterSet& parameters() override { return params_; }
  nlohmann::json config() const override { return nlohmann::json::object(); }
  nlohmann::json architecture() const override { return {{"kind", "oracle"}, {"parameters", 0}}; }

 private:
  ParameterSet params_;
};

}  // namespace crann
