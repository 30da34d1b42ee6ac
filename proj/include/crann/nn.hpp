#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "crann/ops.hpp"
#include "crann/rng.hpp"
#include "crann/tensor.hpp"

namespace crann {

/// Uniform Glorot initialization. shape is (fan_out, fan_in, receptive...),
/// bound sqrt(6 / (fan_in + fan_out)) with fans scaled by the receptive field.
Tensor xavier_init(const Shape& shape, std::uint64_t seed, bool requires_grad = true);

struct NamedTensor {
  std::string path;
  Tensor tensor;
};

struct NamedBuffer {
  std::string path;
  std::shared_ptr<BatchNormStats> stats;
};

/// Flat, ordered registry of a model's trainable tensors and its
/// non-trainable buffers (batch-norm running statistics), keyed by path.
class ParameterSet {
 public:
  void add(const std::string& path, Tensor tensor);
  void add_buffer(const std::string& path, std::shared_ptr<BatchNormStats> stats);
  void append(const std::string& prefix, const ParameterSet& other);

  const std::vector<NamedTensor>& tensors() const noexcept { return tensors_; }
  std::vector<NamedTensor>& tensors() noexcept { return tensors_; }
  const std::vector<NamedBuffer>& buffers() const noexcept { return buffers_; }

  Tensor find(const std::string& path) const;
  std::size_t count() const;
  void zero_grad();
  void set_requires_grad(bool on);

  /// Flattened copy of every parameter value and buffer, in registry order.
  std::vector<double> snapshot() const;
  void restore(const std::vector<double>& flat);

 private:
  std::vector<NamedTensor> tensors_;
  std::vector<NamedBuffer> buffers_;
};

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features, const Rng& rng, bool with_bias = true);

  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
  void register_into(ParameterSet& set, const std::string& prefix) const;

  Tensor weight;
  Tensor bias;
};

/// One LSTM layer; weights use gate order (i, f, g, o).
class LstmLayer {
 public:
  LstmLayer() = default;
  LstmLayer(std::size_t input_size, std::size_t hidden_size, const Rng& rng);

  std::pair<Tensor, Tensor> step(const Tensor& x, const Tensor& h, const Tensor& c) const {
    return lstm_cell(x, h, c, w_ih, w_hh, bias);
  }
  std::size_t hidden_size() const { return w_hh.dim(1); }
  std::size_t input_size() const { return w_ih.dim(1); }
  void register_into(ParameterSet& set, const std::string& prefix) const;

  Tensor w_ih;
  Tensor w_hh;
  Tensor bias;
};

class Conv2d {
 public:
  Conv2d() = default;
  /// Only 3x3 same-padded kernels are supported.
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_size, const Rng& rng);

  Tensor forward(const Tensor& x) const { return conv2d_same(x, kernels, bias); }
  void register_into(ParameterSet& set, const std::string& prefix) const;

  Tensor kernels;
  Tensor bias;
};

class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(std::size_t channels, double momentum, double eps);

  Tensor forward(const Tensor& x, bool training) const { return batch_norm(x, gamma, beta, *stats, training); }
  void register_into(ParameterSet& set, const std::string& prefix) const;

  Tensor gamma;
  Tensor beta;
  std::shared_ptr<BatchNormStats> stats;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

/// One bias-corrected Adam update over every tensor in `params`, reading
/// gradients from the tensors. A tensor without a gradient is treated as
/// having a zero gradient.
void adam_step(std::vector<NamedTensor>& params, AdamState& state, double lr);

}  // namespace crann
