#include "crann/nn.hpp"

#include <cmath>

#include "crann/error.hpp"

namespace crann {

Tensor xavier_init(const Shape& shape, std::uint64_t seed, bool requires_grad) {
  if (shape.size() < 2) throw ContractError("xavier_init needs at least (fan_out, fan_in), got " + shape_str(shape));
  std::size_t receptive = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) receptive *= shape[i];
  const std::size_t fan_out = shape[0] * receptive, fan_in = shape[1] * receptive;
  if (fan_out == 0 || fan_in == 0) throw ContractError("xavier_init with zero fan in shape " + shape_str(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Rng rng(seed);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = rng.uniform(-bound, bound);
  // uniform_real_distribution is half-open; the closed interval still holds.
  return Tensor::from(shape, std::move(values), requires_grad);
}

void ParameterSet::add(const std::string& path, Tensor tensor) {
  for (const auto& t : tensors_)
    if (t.path == path) throw ContractError("duplicate parameter path " + path);
  tensors_.push_back({path, std::move(tensor)});
}

void ParameterSet::add_buffer(const std::string& path, std::shared_ptr<BatchNormStats> stats) {
  buffers_.push_back({path, std::move(stats)});
}

void ParameterSet::append(const std::string& prefix, const ParameterSet& other) {
  for (const auto& t : other.tensors_) add(prefix + t.path, t.tensor);
  for (const auto& b : other.buffers_) add_buffer(prefix + b.path, b.stats);
}

Tensor ParameterSet::find(const std::string& path) const {
  for (const auto& t : tensors_)
    if (t.path == path) return t.tensor;
  throw ContractError("no parameter named " + path);
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.tensor.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& t : tensors_) t.tensor.zero_grad();
}

void ParameterSet::set_requires_grad(bool on) {
  for (auto& t : tensors_) t.tensor.node()->requires_grad = on;
}

std::vector<double> ParameterSet::snapshot() const {
  std::vector<double> flat;
  flat.reserve(count());
  for (const auto& t : tensors_) flat.insert(flat.end(), t.tensor.values().begin(), t.tensor.values().end());
  for (const auto& b : buffers_) {
    flat.insert(flat.end(), b.stats->running_mean.begin(), b.stats->running_mean.end());
    flat.insert(flat.end(), b.stats->running_var.begin(), b.stats->running_var.end());
  }
  return flat;
}

void ParameterSet::restore(const std::vector<double>& flat) {
  std::size_t at = 0;
  auto take = [&](std::span<double> dst) {
    if (at + dst.size() > flat.size()) throw ContractError("parameter snapshot is too short");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), dst.size(), dst.begin());
    at += dst.size();
  };
  for (auto& t : tensors_) take(t.tensor.mutable_values());
  for (auto& b : buffers_) {
    take(b.stats->running_mean);
    take(b.stats->running_var);
  }
  if (at != flat.size()) throw ContractError("parameter snapshot has trailing values");
}

Linear::Linear(std::size_t in_features, std::size_t out_features, const Rng& rng, bool with_bias)
    : weight(xavier_init({out_features, in_features}, rng.split("weight").seed())) {
  if (with_bias) bias = Tensor::zeros({out_features}, true);
}

void Linear::register_into(ParameterSet& set, const std::string& prefix) const {
  set.add(prefix + "weight", weight);
  if (bias.defined()) set.add(prefix + "bias", bias);
}

LstmLayer::LstmLayer(std::size_t input_size, std::size_t hidden_size, const Rng& rng)
    : w_ih(xavier_init({4 * hidden_size, input_size}, rng.split("w_ih").seed())),
      w_hh(xavier_init({4 * hidden_size, hidden_size}, rng.split("w_hh").seed())),
      bias(Tensor::zeros({4 * hidden_size}, true)) {}

void LstmLayer::register_into(ParameterSet& set, const std::string& prefix) const {
  set.add(prefix + "w_ih", w_ih);
  set.add(prefix + "w_hh", w_hh);
  set.add(prefix + "bias", bias);
}

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_size, const Rng& rng) {
  if (kernel_size != 3)
    throw ContractError("Conv2d supports only 3x3 same-padded kernels, requested size " + std::to_string(kernel_size));
  kernels = xavier_init({out_channels, in_channels, 3, 3}, rng.split("kernels").seed());
  bias = Tensor::zeros({out_channels}, true);
}

void Conv2d::register_into(ParameterSet& set, const std::string& prefix) const {
  set.add(prefix + "kernels", kernels);
  set.add(prefix + "bias", bias);
}

BatchNorm::BatchNorm(std::size_t channels, double momentum, double eps)
    : gamma(Tensor::full({channels}, 1.0, true)),
      beta(Tensor::zeros({channels}, true)),
      stats(std::make_shared<BatchNormStats>(channels, momentum, eps)) {}

void BatchNorm::register_into(ParameterSet& set, const std::string& prefix) const {
  set.add(prefix + "gamma", gamma);
  set.add(prefix + "beta", beta);
  set.add_buffer(prefix + "running", stats);
}

void adam_step(std::vector<NamedTensor>& params, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw ContractError("adam_step: learning rate must be positive");
  for (const auto& p : params)
    if (p.tensor.has_grad())
      for (double g : p.tensor.grad())
        if (!std::isfinite(g)) throw TrainingError("non-finite gradient in parameter " + p.path);
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (auto& p : params) {
    const std::size_t n = p.tensor.numel();
    auto& m = state.m[p.path];
    auto& v = state.v[p.path];
    if (m.empty()) {
      m.assign(n, 0.0);
      v.assign(n, 0.0);
    }
    if (m.size() != n) throw DimensionError("adam_step: state for " + p.path + " does not match parameter shape");
    auto values = p.tensor.mutable_values();
    const bool has = p.tensor.has_grad();
    auto grad = has ? p.tensor.grad() : std::span<const double>{};
    for (std::size_t i = 0; i < n; ++i) {
      const double g = has ? grad[i] : 0.0;
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      values[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + state.eps);
    }
  }
}

}  // namespace crann
