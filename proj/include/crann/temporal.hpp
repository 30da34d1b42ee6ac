#pragma once

#include <json.hpp>

#include "crann/nn.hpp"

namespace crann {

struct TemporalConfig {
  std::size_t lookback = 336;
  std::size_t horizon = 24;
  std::size_t hidden = 100;
  std::size_t attention = 100;
  /// Feed the ground truth instead of the previous prediction while training.
  bool teacher_forcing = false;

  nlohmann::json to_json() const;
  static TemporalConfig from_json(const nlohmann::json& j);
};

struct TemporalOutput {
  Tensor prediction;  // [B x horizon]
  Tensor attention;   // [B x horizon x lookback], rows on the simplex
};

struct EncoderStates {
  Tensor states;  // [B x N x H]
  Tensor h;       // final hidden [B x H]
  Tensor c;       // final cell [B x H]
};

/// Softmax-normalized additive attention of one decoder state over all
/// encoder states: softmax_j(v . tanh(W_d h + W_e s_j)). Returns [B x N].
Tensor attention_weights(const Tensor& decoder_h, const Tensor& encoder_states, const Tensor& w_d, const Tensor& w_e,
                         const Tensor& v);
/// c = sum_j alpha_j s_j. alpha [B x N], states [B x N x H] -> [B x H].
Tensor attention_context(const Tensor& alpha, const Tensor& encoder_states);

/// Encoder-decoder LSTM with additive attention over the encoder states.
class TemporalModule {
 public:
  TemporalModule() = default;
  TemporalModule(const TemporalConfig& cfg, const Rng& rng);

  /// series [B x lookback] -> encoder states.
  EncoderStates encode(const Tensor& series) const;
  /// series [B x lookback]; teacher [B x horizon] is used only when
  /// teacher forcing is enabled and `training` is set.
  TemporalOutput forward(const Tensor& series, bool training, const Tensor& teacher = {}) const;

  void register_into(ParameterSet& set, const std::string& prefix) const;
  const TemporalConfig& config() const noexcept { return cfg_; }
  nlohmann::json architecture() const;

  LstmLayer encoder;
  LstmLayer decoder;
  Linear w_e;  // [A x H], no bias
  Linear w_d;  // [A x H], no bias
  Tensor w_c;  // [1 x A]
  Linear head; // [1 x 2H]

 private:
  TemporalConfig cfg_;
};

}  // namespace crann
