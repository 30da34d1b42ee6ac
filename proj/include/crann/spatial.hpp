#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "crann/dataset.hpp"
#include "crann/nn.hpp"

namespace crann {

enum class GridLayout { RowMajor, Geographic };

/// Embedding of S sensors into an H x W image.
struct SensorGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::size_t> cell;  // sensor index -> row * width + col
  std::vector<char> valid;        // per cell, 1 when a sensor sits there

  std::size_t n_sensors() const { return cell.size(); }
  std::size_t n_cells() const { return height * width; }
  std::size_t masked_cells() const { return n_cells() - n_sensors(); }
  nlohmann::json to_json() const;
  static SensorGrid from_json(const nlohmann::json& j);
};

/// Near-square packing: H = ceil(sqrt(S)), W = ceil(S / H). RowMajor fills
/// cells in sensor order; Geographic sorts rows north to south by latitude
/// and each row west to east by longitude.
SensorGrid build_grid(const std::vector<SensorInfo>& sensors, GridLayout layout = GridLayout::RowMajor);
SensorGrid build_grid(const std::vector<std::string>& sensor_ids);

/// [B x C x S] -> [B x C x H x W] with zeros in masked cells, and back.
Tensor to_grid(const Tensor& x, const SensorGrid& grid);
Tensor from_grid(const Tensor& image, const SensorGrid& grid);
/// Zeroes masked cells of a [B x C x H x W] image (identity without masks).
Tensor mask_grid(const Tensor& image, const SensorGrid& grid);

/// Conv -> batch norm -> ReLU blocks, then a 3x3 projection to `out_channels`.
/// Masked cells are re-zeroed after every block so they act as padding.
class ConvStack {
 public:
  ConvStack() = default;
  ConvStack(std::size_t in_channels, const std::vector<std::size_t>& widths, std::size_t out_channels, const Rng& rng,
            double bn_momentum = 0.1, double bn_eps = 1e-5);

  /// image [B x C x H x W] -> [B x out x H x W]
  Tensor forward(const Tensor& image, const SensorGrid& grid, bool training) const;
  void register_into(ParameterSet& set, const std::string& prefix) const;
  const std::vector<std::size_t>& widths() const noexcept { return widths_; }

  std::vector<Conv2d> convs;
  std::vector<BatchNorm> norms;
  Conv2d projection;

 private:
  std::vector<std::size_t> widths_;
};

struct SpatialConfig {
  std::size_t lags = 24;
  std::size_t horizon = 24;
  std::vector<std::size_t> channels{64, 64, 64, 64, 64};
  GridLayout layout = GridLayout::RowMajor;
  /// Contract the attention over lags as well as sensors, giving one [S]
  /// output repeated over every horizon.
  bool contract_lags = false;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  nlohmann::json to_json() const;
  static SpatialConfig from_json(const nlohmann::json& j);
};

/// sigma[b,i,j,k] = x_conv[b,i,k] * w_att[i,j,k], softmax over k.
/// x_conv [B x T x S], w_att [T x S x S] -> [B x T x S x S].
Tensor st_attention(const Tensor& x_conv, const Tensor& w_att);
/// out[b,i,j] = sum_k a[b,i,j,k] * x_conv[b,i,k].
Tensor attend_output(const Tensor& a, const Tensor& x_conv);

struct SpatialOutput {
  Tensor prediction;  // [B x horizon x S]
  Tensor attention;   // [B x T x S x S]
  Tensor x_conv;      // [B x T x S]
};

class SpatialModule {
 public:
  SpatialModule() = default;
  SpatialModule(const SpatialConfig& cfg, SensorGrid grid, const Rng& rng);

  /// x [B x T x S] -> x_conv [B x T x S]
  Tensor conv_forward(const Tensor& x, bool training) const;
  SpatialOutput forward(const Tensor& x, bool training) const;

  void register_into(ParameterSet& set, const std::string& prefix) const;
  const SpatialConfig& config() const noexcept { return cfg_; }
  const SensorGrid& grid() const noexcept { return grid_; }
  nlohmann::json architecture() const;

  ConvStack stack;
  Tensor w_att;  // [T x S x S], zero-initialized

 private:
  SpatialConfig cfg_;
  SensorGrid grid_;
};

}  // namespace crann
