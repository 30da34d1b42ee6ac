#include "crann/temporal.hpp"

#include <cmath>

#include "crann/error.hpp"

namespace crann {

nlohmann::json TemporalConfig::to_json() const {
  return {{"lookback", lookback},   {"horizon", horizon},
          {"hidden", hidden},       {"attention", attention},
          {"teacher_forcing", teacher_forcing}};
}

TemporalConfig TemporalConfig::from_json(const nlohmann::json& j) {
  TemporalConfig c;
  c.lookback = j.value("lookback", c.lookback);
  c.horizon = j.value("horizon", c.horizon);
  c.hidden = j.value("hidden", c.hidden);
  c.attention = j.value("attention", c.attention);
  c.teacher_forcing = j.value("teacher_forcing", c.teacher_forcing);
  return c;
}

Tensor attention_weights(const Tensor& decoder_h, const Tensor& encoder_states, const Tensor& w_d, const Tensor& w_e,
                         const Tensor& v) {
  return softmax(additive_scores(linear(encoder_states, w_e), linear(decoder_h, w_d), v), 1);
}

Tensor attention_context(const Tensor& alpha, const Tensor& encoder_states) {
  if (alpha.rank() != 2 || encoder_states.rank() != 3 || alpha.dim(0) != encoder_states.dim(0) ||
      alpha.dim(1) != encoder_states.dim(1))
    throw DimensionError("attention_context: weights " + shape_str(alpha.shape()) + " do not match states " +
                         shape_str(encoder_states.shape()));
  const auto B = alpha.dim(0), N = alpha.dim(1), H = encoder_states.dim(2);
  return reshape(bmm(reshape(alpha, {B, 1, N}), encoder_states), {B, H});
}

TemporalModule::TemporalModule(const TemporalConfig& cfg, const Rng& rng)
    : encoder(1, cfg.hidden, rng.split("encoder")),
      decoder(1 + cfg.hidden, cfg.hidden, rng.split("decoder")),
      w_e(cfg.hidden, cfg.attention, rng.split("w_e"), false),
      w_d(cfg.hidden, cfg.attention, rng.split("w_d"), false),
      w_c(xavier_init({1, cfg.attention}, rng.split("w_c").seed())),
      head(2 * cfg.hidden, 1, rng.split("head")),
      cfg_(cfg) {
  if (cfg.lookback == 0 || cfg.horizon == 0 || cfg.hidden == 0 || cfg.attention == 0)
    throw ConfigError("temporal module sizes must be positive");
}

EncoderStates TemporalModule::encode(const Tensor& series) const {
  if (series.rank() != 2 || series.dim(1) != cfg_.lookback)
    throw DimensionError("temporal encoder expects [B x " + std::to_string(cfg_.lookback) + "], got " +
                         shape_str(series.shape()));
  const auto B = series.dim(0), H = cfg_.hidden;
  Tensor h = Tensor::zeros({B, H}), c = Tensor::zeros({B, H});
  std::vector<Tensor> hs;
  hs.reserve(cfg_.lookback);
  for (std::size_t t = 0; t < cfg_.lookback; ++t) {
    std::tie(h, c) = encoder.step(slice(series, 1, t, 1), h, c);
    hs.push_back(h);
  }
  return {stack(hs, 1), h, c};
}

TemporalOutput TemporalModule::forward(const Tensor& series, bool training, const Tensor& teacher) const {
  const bool forcing = training && cfg_.teacher_forcing && teacher.defined();
  if (forcing && (teacher.rank() != 2 || teacher.dim(1) != cfg_.horizon || teacher.dim(0) != series.dim(0)))
    throw DimensionError("teacher series must be [B x " + std::to_string(cfg_.horizon) + "], got " +
                         shape_str(teacher.shape()));
  auto enc = encode(series);
  const auto B = series.dim(0);
  const auto enc_proj = w_e.forward(enc.states);
  Tensor h = enc.h, c = enc.c;
  Tensor prev = slice(series, 1, cfg_.lookback - 1, 1);
  Tensor context = Tensor::zeros({B, cfg_.hidden});
  std::vector<Tensor> outputs, maps;
  for (std::size_t i = 0; i < cfg_.horizon; ++i) {
    std::tie(h, c) = decoder.step(concat({prev, context}, 1), h, c);
    auto alpha = softmax(additive_scores(enc_proj, w_d.forward(h), w_c), 1);
    context = attention_context(alpha, enc.states);
    auto y = head.forward(concat({context, h}, 1));
    for (double v : y.values())
      if (!std::isfinite(v))
        throw NumericError("temporal decoder produced a non-finite value at step " + std::to_string(i));
    outputs.push_back(y);
    maps.push_back(alpha);
    prev = forcing ? slice(teacher, 1, i, 1) : y;
  }
  return {concat(outputs, 1), stack(maps, 1)};
}

void TemporalModule::register_into(ParameterSet& set, const std::string& prefix) const {
  encoder.register_into(set, prefix + "encoder.");
  decoder.register_into(set, prefix + "decoder.");
  w_e.register_into(set, prefix + "attention.w_e.");
  w_d.register_into(set, prefix + "attention.w_d.");
  set.add(prefix + "attention.w_c", w_c);
  head.register_into(set, prefix + "head.");
}

nlohmann::json TemporalModule::architecture() const {
  return {{"encoder", {{"type", "lstm"}, {"layers", 1}, {"hidden", cfg_.hidden}}},
          {"decoder", {{"type", "lstm"}, {"layers", 1}, {"hidden", cfg_.hidden}, {"input", 1 + cfg_.hidden}}},
          {"attention", {{"type", "additive"}, {"width", cfg_.attention}}},
          {"lookback", cfg_.lookback},
          {"horizon", cfg_.horizon}};
}

}  // namespace crann
