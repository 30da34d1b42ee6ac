#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "crann/forecaster.hpp"

namespace crann {

/// crann, cnn, lstm, cnn_lstm, seq2seq, persistence, seasonal, oracle
const std::vector<std::string>& model_kinds();

/// Constructor configuration for `kind` sized for the given sensors and
/// window; `overrides` is merge-patched on top.
nlohmann::json default_model_config(const std::string& kind, const std::vector<SensorInfo>& sensors,
                                    const WindowConfig& window, const nlohmann::json& overrides = {});

/// Builds a freshly initialized model. Throws ConfigError on unknown kinds.
ForecasterPtr make_forecaster(const std::string& kind, const nlohmann::json& config, std::uint64_t seed);

}  // namespace crann
