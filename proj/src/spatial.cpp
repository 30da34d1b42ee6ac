#include "crann/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "crann/error.hpp"

namespace crann {

namespace {

std::string layout_name(GridLayout l) { return l == GridLayout::RowMajor ? "rowmajor" : "geographic"; }

GridLayout parse_layout(const std::string& s) {
  if (s == "rowmajor") return GridLayout::RowMajor;
  if (s == "geographic") return GridLayout::Geographic;
  throw ConfigError("unknown grid layout '" + s + "' (expected rowmajor or geographic)");
}

std::vector<std::size_t> valid_cells(const SensorGrid& grid) {
  std::vector<std::size_t> cells;
  for (std::size_t i = 0; i < grid.valid.size(); ++i)
    if (grid.valid[i]) cells.push_back(i);
  return cells;
}

}  // namespace

nlohmann::json SensorGrid::to_json() const { return {{"height", height}, {"width", width}, {"cell", cell}}; }

SensorGrid SensorGrid::from_json(const nlohmann::json& j) {
  SensorGrid g;
  g.height = j.at("height").get<std::size_t>();
  g.width = j.at("width").get<std::size_t>();
  g.cell = j.at("cell").get<std::vector<std::size_t>>();
  g.valid.assign(g.height * g.width, 0);
  for (auto c : g.cell) {
    if (c >= g.valid.size() || g.valid[c]) throw CheckpointError("sensor grid mapping is not injective");
    g.valid[c] = 1;
  }
  return g;
}

SensorGrid build_grid(const std::vector<SensorInfo>& sensors, GridLayout layout) {
  const auto S = sensors.size();
  if (S == 0) throw ConfigError("a sensor grid needs at least one sensor");
  std::set<std::string> seen;
  for (const auto& s : sensors)
    if (!seen.insert(s.id).second) throw ConfigError("duplicate sensor id '" + s.id + "' in grid");
  SensorGrid g;
  g.height = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(S))));
  while (g.height * g.height < S) ++g.height;  // guard against sqrt rounding
  while (g.height > 1 && (g.height - 1) * (g.height - 1) >= S) --g.height;
  g.width = (S + g.height - 1) / g.height;
  std::vector<std::size_t> order(S);
  std::iota(order.begin(), order.end(), 0);
  if (layout == GridLayout::Geographic) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sensors[a].latitude > sensors[b].latitude; });
    for (std::size_t r = 0; r * g.width < S; ++r) {
      auto first = order.begin() + static_cast<std::ptrdiff_t>(r * g.width);
      auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(S, (r + 1) * g.width));
      std::stable_sort(first, last,
                       [&](std::size_t a, std::size_t b) { return sensors[a].longitude < sensors[b].longitude; });
    }
  }
  g.cell.assign(S, 0);
  g.valid.assign(g.n_cells(), 0);
  for (std::size_t pos = 0; pos < S; ++pos) {
    g.cell[order[pos]] = pos;
    g.valid[pos] = 1;
  }
  return g;
}

SensorGrid build_grid(const std::vector<std::string>& sensor_ids) {
  std::vector<SensorInfo> s;
  for (const auto& id : sensor_ids) s.push_back({id, 0.0, 0.0});
  return build_grid(s, GridLayout::RowMajor);
}

Tensor to_grid(const Tensor& x, const SensorGrid& grid) {
  if (x.rank() != 3 || x.dim(2) != grid.n_sensors())
    throw DimensionError("to_grid: input " + shape_str(x.shape()) + " does not match a grid of " +
                         std::to_string(grid.n_sensors()) + " sensors");
  return reshape(scatter_last(x, grid.cell, grid.n_cells()), {x.dim(0), x.dim(1), grid.height, grid.width});
}

Tensor from_grid(const Tensor& image, const SensorGrid& grid) {
  if (image.rank() != 4 || image.dim(2) != grid.height || image.dim(3) != grid.width)
    throw DimensionError("from_grid: image " + shape_str(image.shape()) + " does not match a " +
                         std::to_string(grid.height) + "x" + std::to_string(grid.width) + " grid");
  return gather_last(reshape(image, {image.dim(0), image.dim(1), grid.n_cells()}), grid.cell);
}

Tensor mask_grid(const Tensor& image, const SensorGrid& grid) {
  if (grid.masked_cells() == 0) return image;
  const auto cells = valid_cells(grid);
  const auto B = image.dim(0), C = image.dim(1);
  auto flat = reshape(image, {B, C, grid.n_cells()});
  return reshape(scatter_last(gather_last(flat, cells), cells, grid.n_cells()), image.shape());
}

ConvStack::ConvStack(std::size_t in_channels, const std::vector<std::size_t>& widths, std::size_t out_channels,
                     const Rng& rng, double bn_momentum, double bn_eps)
    : widths_(widths) {
  std::size_t c = in_channels;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    if (widths[l] == 0) throw ConfigError("convolution widths must be positive");
    convs.emplace_back(c, widths[l], 3, rng.split("conv").split(l));
    norms.emplace_back(widths[l], bn_momentum, bn_eps);
    c = widths[l];
  }
  projection = Conv2d(c, out_channels, 3, rng.split("projection"));
}

Tensor ConvStack::forward(const Tensor& image, const SensorGrid& grid, bool training) const {
  Tensor z = mask_grid(image, grid);
  for (std::size_t l = 0; l < convs.size(); ++l) z = mask_grid(relu(norms[l].forward(convs[l].forward(z), training)), grid);
  return projection.forward(z);
}

void ConvStack::register_into(ParameterSet& set, const std::string& prefix) const {
  for (std::size_t l = 0; l < convs.size(); ++l) {
    const auto p = prefix + "block" + std::to_string(l) + ".";
    convs[l].register_into(set, p + "conv.");
    norms[l].register_into(set, p + "bn.");
  }
  projection.register_into(set, prefix + "projection.");
}

nlohmann::json SpatialConfig::to_json() const {
  return {{"lags", lags},
          {"horizon", horizon},
          {"channels", channels},
          {"layout", layout_name(layout)},
          {"contract_lags", contract_lags},
          {"bn_momentum", bn_momentum},
          {"bn_eps", bn_eps}};
}

SpatialConfig SpatialConfig::from_json(const nlohmann::json& j) {
  SpatialConfig c;
  c.lags = j.value("lags", c.lags);
  c.horizon = j.value("horizon", c.horizon);
  c.channels = j.value("channels", c.channels);
  c.layout = parse_layout(j.value("layout", layout_name(c.layout)));
  c.contract_lags = j.value("contract_lags", c.contract_lags);
  c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
  c.bn_eps = j.value("bn_eps", c.bn_eps);
  return c;
}

Tensor st_attention(const Tensor& x_conv, const Tensor& w_att) { return softmax(st_scores(x_conv, w_att), 3); }

Tensor attend_output(const Tensor& a, const Tensor& x_conv) {
  if (a.rank() != 4 || x_conv.rank() != 3 || a.dim(0) != x_conv.dim(0) || a.dim(1) != x_conv.dim(1) ||
      a.dim(2) != x_conv.dim(2) || a.dim(3) != x_conv.dim(2))
    throw DimensionError("attend_output: attention " + shape_str(a.shape()) + " does not match activations " +
                         shape_str(x_conv.shape()));
  const auto B = a.dim(0), T = a.dim(1), S = a.dim(2);
  auto out = bmm(reshape(a, {B * T, S, S}), reshape(x_conv, {B * T, S, 1}));
  return reshape(out, {B, T, S});
}

SpatialModule::SpatialModule(const SpatialConfig& cfg, SensorGrid grid, const Rng& rng)
    : cfg_(cfg), grid_(std::move(grid)) {
  if (cfg.lags == 0 || cfg.horizon == 0) throw ConfigError("spatial module sizes must be positive");
  if (!cfg.contract_lags && cfg.lags != cfg.horizon)
    throw ConfigError("per-horizon spatial attention needs as many lags as horizon steps (" + std::to_string(cfg.lags) +
                      " vs " + std::to_string(cfg.horizon) + ")");
  stack = ConvStack(cfg.lags, cfg.channels, cfg.lags, rng.split("stack"), cfg.bn_momentum, cfg.bn_eps);
  const auto S = grid_.n_sensors();
  w_att = Tensor::zeros({cfg.lags, S, S}, true);
}

Tensor SpatialModule::conv_forward(const Tensor& x, bool training) const {
  if (x.rank() != 3 || x.dim(1) != cfg_.lags || x.dim(2) != grid_.n_sensors())
    throw DimensionError("spatial module expects [B x " + std::to_string(cfg_.lags) + " x " +
                         std::to_string(grid_.n_sensors()) + "], got " + shape_str(x.shape()));
  return from_grid(stack.forward(to_grid(x, grid_), grid_, training), grid_);
}

SpatialOutput SpatialModule::forward(const Tensor& x, bool training) const {
  auto x_conv = conv_forward(x, training);
  if (!cfg_.contract_lags) {
    auto a = st_attention(x_conv, w_att);
    return {attend_output(a, x_conv), a, x_conv};
  }
  const auto B = x.dim(0), T = cfg_.lags, S = grid_.n_sensors();
  // normalize jointly over (lag, source) for every target sensor
  auto sigma = permute(st_scores(x_conv, w_att), {0, 2, 1, 3});
  auto a = softmax(reshape(sigma, {B, S, T * S}), 2);
  auto out = reshape(bmm(a, reshape(x_conv, {B, T * S, 1})), {B, 1, S});
  std::vector<Tensor> rows(cfg_.horizon, out);
  return {concat(rows, 1), permute(reshape(a, {B, S, T, S}), {0, 2, 1, 3}), x_conv};
}

void SpatialModule::register_into(ParameterSet& set, const std::string& prefix) const {
  stack.register_into(set, prefix + "conv.");
  set.add(prefix + "w_att", w_att);
}

nlohmann::json SpatialModule::architecture() const {
  return {{"convolutions", cfg_.channels},
          {"kernel", 3},
          {"projection", cfg_.lags},
          {"grid", {grid_.height, grid_.width}},
          {"attention_tensor", {cfg_.lags, grid_.n_sensors(), grid_.n_sensors()}},
          {"contract_lags", cfg_.contract_lags}};
}

}  // namespace crann
