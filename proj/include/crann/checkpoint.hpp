#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "crann/dataset.hpp"
#include "crann/forecaster.hpp"

namespace crann {

/// On-disk layout: 8-byte magic "CRANNCK1", little-endian u64 metadata
/// length, UTF-8 JSON metadata, then every parameter and batch-norm buffer
/// as little-endian float64 in the order the metadata lists them.
struct LoadedModel {
  ForecasterPtr model;
  NormalizationParams normalization;
  WindowConfig window;
  nlohmann::json meta;
};

void save_checkpoint(const std::filesystem::path& path, const Forecaster& model, const NormalizationParams& norm,
                     const WindowConfig& window, const nlohmann::json& extra = nlohmann::json::object());
LoadedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace crann
