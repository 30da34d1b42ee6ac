#include "crann/baselines.hpp"

#include "crann/error.hpp"

namespace crann {

namespace {

void require_spatial(const Batch& batch, std::size_t lags, std::size_t sensors, const char* who) {
  if (!batch.spatial.defined() || batch.spatial.rank() != 3 || batch.spatial.dim(1) != lags ||
      batch.spatial.dim(2) != sensors)
    throw DimensionError(std::string(who) + " expects a spatial block [B x " + std::to_string(lags) + " x " +
                         std::to_string(sensors) + "]");
}

Tensor recent_history(const Batch& batch, std::size_t lookback, std::size_t sensors, const char* who) {
  if (!batch.history.defined() || batch.history.rank() != 3 || batch.history.dim(1) < lookback ||
      batch.history.dim(2) != sensors)
    throw DimensionError(std::string(who) + " needs " + std::to_string(lookback) + " hours of history for " +
                         std::to_string(sensors) + " sensors, batch carries " +
                         (batch.history.defined() ? shape_str(batch.history.shape()) : std::string("none")));
  const auto L = batch.history.dim(1);
  return L == lookback ? batch.history : slice(batch.history, 1, L - lookback, lookback);
}

std::vector<LstmLayer> make_stack(std::size_t input, std::size_t hidden, std::size_t layers, const Rng& rng) {
  if (layers == 0 || hidden == 0) throw ConfigError("recurrent stacks need at least one layer and one unit");
  std::vector<LstmLayer> out;
  for (std::size_t l = 0; l < layers; ++l) out.emplace_back(l == 0 ? input : hidden, hidden, rng.split(l));
  return out;
}

void register_stack(const std::vector<LstmLayer>& stack, ParameterSet& set, const std::string& prefix) {
  for (std::size_t l = 0; l < stack.size(); ++l) stack[l].register_into(set, prefix + std::to_string(l) + ".");
}

struct StackState {
  std::vector<Tensor> h, c;
};

StackState zero_state(std::size_t layers, std::size_t batch, std::size_t hidden) {
  StackState s;
  for (std::size_t l = 0; l < layers; ++l) {
    s.h.push_back(Tensor::zeros({batch, hidden}));
    s.c.push_back(Tensor::zeros({batch, hidden}));
  }
  return s;
}

// One time step through every layer; returns the top hidden state.
Tensor step_stack(const std::vector<LstmLayer>& stack, StackState& st, Tensor x) {
  for (std::size_t l = 0; l < stack.size(); ++l) {
    std::tie(st.h[l], st.c[l]) = stack[l].step(x, st.h[l], st.c[l]);
    x = st.h[l];
  }
  return x;
}

Tensor time_step(const Tensor& seq, std::size_t t) {
  return reshape(slice(seq, 1, t, 1), {seq.dim(0), seq.dim(2)});
}

nlohmann::json stack_json(std::size_t layers, std::size_t hidden) {
  return {{"type", "lstm"}, {"layers", layers}, {"hidden", hidden}};
}

}  // namespace

// ---- CNN -----------------------------------------------------------------

CnnBaseline::CnnBaseline(const Config& cfg, SensorGrid grid, const Rng& rng) : cfg_(cfg), grid_(std::move(grid)) {
  stack = ConvStack(cfg.lags, cfg.channels, cfg.horizon, rng.split("stack"));
  stack.register_into(params_, "conv.");
}

Tensor CnnBaseline::forward(const Batch& batch, bool training) {
  require_spatial(batch, cfg_.lags, grid_.n_sensors(), "cnn");
  return from_grid(stack.forward(to_grid(batch.spatial, grid_), grid_, training), grid_);
}

nlohmann::json CnnBaseline::config() const {
  return {{"lags", cfg_.lags}, {"horizon", cfg_.horizon}, {"channels", cfg_.channels}, {"grid", grid_.to_json()}};
}

nlohmann::json CnnBaseline::architecture() const {
  return {{"kind", "cnn"},
          {"convolutions", cfg_.channels},
          {"kernel", 3},
          {"head", {{"type", "conv3x3"}, {"outputs", cfg_.horizon}}},
          {"lookback", cfg_.lags},
          {"parameters", params_.count()}};
}

// ---- LSTM ----------------------------------------------------------------

LstmBaseline::LstmBaseline(const Config& cfg, const Rng& rng)
    : layers(make_stack(cfg.sensors, cfg.hidden, cfg.layers, rng.split("lstm"))),
      head(cfg.hidden, cfg.horizon * cfg.sensors, rng.split("head")),
      cfg_(cfg) {
  register_stack(layers, params_, "lstm.");
  head.register_into(params_, "head.");
}

Tensor LstmBaseline::forward(const Batch& batch, bool) {
  const auto seq = recent_history(batch, cfg_.lookback, cfg_.sensors, "lstm");
  const auto B = seq.dim(0);
  auto st = zero_state(cfg_.layers, B, cfg_.hidden);
  Tensor top;
  for (std::size_t t = 0; t < cfg_.lookback; ++t) top = step_stack(layers, st, time_step(seq, t));
  return reshape(head.forward(top), {B, cfg_.horizon, cfg_.sensors});
}

nlohmann::json LstmBaseline::config() const {
  return {{"sensors", cfg_.sensors},
          {"lookback", cfg_.lookback},
          {"horizon", cfg_.horizon},
          {"hidden", cfg_.hidden},
          {"layers", cfg_.layers}};
}

nlohmann::json LstmBaseline::architecture() const {
  auto j = stack_json(cfg_.layers, cfg_.hidden);
  return {{"kind", "lstm"},
          {"recurrent", j},
          {"head", {{"type", "linear"}, {"outputs", cfg_.horizon * cfg_.sensors}}},
          {"lookback", cfg_.lookback},
          {"parameters", params_.count()}};
}

// ---- CNN + LSTM ----------------------------------------------------------

CnnLstmBaseline::CnnLstmBaseline(const Config& cfg, SensorGrid grid, const Rng& rng)
    : cfg_(cfg), grid_(std::move(grid)) {
  if (cfg.lags != cfg.horizon)
    throw ConfigError("cnn_lstm maps each input lag to one horizon step; lags and horizon must agree");
  stack = ConvStack(cfg.lags, cfg.channels, cfg.lags, rng.split("stack"));
  layers = make_stack(grid_.n_sensors(), cfg.hidden, cfg.layers, rng.split("lstm"));
  head = Linear(cfg.hidden, grid_.n_sensors(), rng.split("head"));
  stack.register_into(params_, "conv.");
  register_stack(layers, params_, "lstm.");
  head.register_into(params_, "head.");
}

Tensor CnnLstmBaseline::forward(const Batch& batch, bool training) {
  const auto S = grid_.n_sensors();
  require_spatial(batch, cfg_.lags, S, "cnn_lstm");
  auto seq = from_grid(stack.forward(to_grid(batch.spatial, grid_), grid_, training), grid_);
  const auto B = seq.dim(0);
  auto st = zero_state(cfg_.layers, B, cfg_.hidden);
  std::vector<Tensor> outs;
  for (std::size_t t = 0; t < cfg_.lags; ++t) outs.push_back(head.forward(step_stack(layers, st, time_step(seq, t))));
  return crann::stack(outs, 1);
}

nlohmann::json CnnLstmBaseline::config() const {
  return {{"lags", cfg_.lags},       {"horizon", cfg_.horizon}, {"channels", cfg_.channels},
          {"hidden", cfg_.hidden},   {"layers", cfg_.layers},   {"grid", grid_.to_json()}};
}

nlohmann::json CnnLstmBaseline::architecture() const {
  return {{"kind", "cnn_lstm"},
          {"convolutions", cfg_.channels},
          {"kernel", 3},
          {"recurrent", stack_json(cfg_.layers, cfg_.hidden)},
          {"lookback", cfg_.lags},
          {"parameters", params_.count()}};
}

// ---- seq2seq -------------------------------------------------------------

Seq2SeqBaseline::Seq2SeqBaseline(const Config& cfg, const Rng& rng)
    : encoder(make_stack(cfg.sensors, cfg.hidden, cfg.layers, rng.split("encoder"))),
      decoder(make_stack(cfg.hidden + cfg.sensors, cfg.hidden, cfg.layers, rng.split("decoder"))),
      head(cfg.hidden, cfg.sensors, rng.split("head")),
      cfg_(cfg) {
  register_stack(encoder, params_, "encoder.");
  register_stack(decoder, params_, "decoder.");
  head.register_into(params_, "head.");
}

Tensor Seq2SeqBaseline::forward(const Batch& batch, bool) {
  const auto seq = recent_history(batch, cfg_.lookback, cfg_.sensors, "seq2seq");
  const auto B = seq.dim(0);
  auto st = zero_state(cfg_.layers, B, cfg_.hidden);
  std::vector<Tensor> states;
  states.reserve(cfg_.lookback);
  for (std::size_t t = 0; t < cfg_.lookback; ++t) states.push_back(step_stack(encoder, st, time_step(seq, t)));
  const auto summary = mean_axis(stack(states, 1), 1);
  Tensor prev = time_step(seq, cfg_.lookback - 1);
  std::vector<Tensor> outs;
  for (std::size_t i = 0; i < cfg_.horizon; ++i) {
    prev = head.forward(step_stack(decoder, st, concat({summary, prev}, 1)));
    outs.push_back(prev);
  }
  return stack(outs, 1);
}

nlohmann::json Seq2SeqBaseline::config() const {
  return {{"sensors", cfg_.sensors},
          {"lookback", cfg_.lookback},
          {"horizon", cfg_.horizon},
          {"hidden", cfg_.hidden},
          {"layers", cfg_.layers}};
}

nlohmann::json Seq2SeqBaseline::architecture() const {
  return {{"kind", "seq2seq"},
          {"encoder", stack_json(cfg_.layers, cfg_.hidden)},
          {"decoder", stack_json(cfg_.layers, cfg_.hidden)},
          {"lookback", cfg_.lookback},
          {"parameters", params_.count()}};
}

// ---- naive predictors ----------------------------------------------------

Tensor PersistenceForecaster::forward(const Batch& batch, bool) {
  Tensor last;
  if (batch.ar.defined() && batch.ar.rank() == 3 && batch.ar.dim(1) > 0) {
    last = batch.ar;  // row 0 is t-1
  } else if (batch.history.defined() && batch.history.rank() == 3 && batch.history.dim(1) > 0) {
    last = slice(batch.history, 1, batch.history.dim(1) - 1, 1);
  } else {
    throw WindowingError("persistence needs at least one observed hour before the origin");
  }
  const auto B = last.dim(0), S = last.dim(2), rows = last.dim(1);
  const auto& v = last.values();
  std::vector<double> out(B * horizon_ * S);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < horizon_; ++h)
      for (std::size_t s = 0; s < S; ++s) out[(b * horizon_ + h) * S + s] = v[b * rows * S + s];
  return Tensor::from({B, horizon_, S}, std::move(out));
}

Tensor SeasonalNaiveForecaster::forward(const Batch& batch, bool) {
  if (horizon_ > period_) throw ConfigError("seasonal naive horizon exceeds its period");
  if (!batch.history.defined() || batch.history.rank() != 3 || batch.history.dim(1) < period_)
    throw WindowingError("seasonal naive needs " + std::to_string(period_) + " hours of history");
  const auto B = batch.history.dim(0), L = batch.history.dim(1), S = batch.history.dim(2);
  const auto& v = batch.history.values();
  std::vector<double> out(B * horizon_ * S);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < horizon_; ++h)
      for (std::size_t s = 0; s < S; ++s) out[(b * horizon_ + h) * S + s] = v[(b * L + L - period_ + h) * S + s];
  return Tensor::from({B, horizon_, S}, std::move(out));
}

}  // namespace crann
