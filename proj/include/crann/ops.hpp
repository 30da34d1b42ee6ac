#pragma once

#include <utility>
#include <vector>

#include "crann/tensor.hpp"

namespace crann {

// Differentiable primitives. Every op validates shapes and throws
// DimensionError naming the offending shapes.

Tensor matmul(const Tensor& a, const Tensor& b);
/// [B x m x k] * [B x k x n] -> [B x m x n]
Tensor bmm(const Tensor& a, const Tensor& b);
/// x[..., in] * W[out x in]^T + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);

/// Max-shifted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

Tensor concat(const std::vector<Tensor>& xs, std::size_t axis);
/// Inserts a new axis of extent xs.size() at `axis`.
Tensor stack(const std::vector<Tensor>& xs, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
/// Reorders axes: output axis i is input axis perm[i].
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean over one axis, which is removed from the shape.
Tensor mean_axis(const Tensor& x, std::size_t axis);
Tensor mse(const Tensor& prediction, const Tensor& target);

/// 3x3 cross-correlation, stride 1, zero padding 1. Input is [C x H x W]
/// or [B x C x H x W]; kernels [K x C x 3 x 3]; bias [K] or undefined.
Tensor conv2d_same(const Tensor& input, const Tensor& kernels, const Tensor& bias = {});

struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormStats(std::size_t channels = 0, double momentum_ = 0.1, double eps_ = 1e-5)
      : running_mean(channels, 0.0), running_var(channels, 1.0), momentum(momentum_), eps(eps_) {}
};

/// Normalizes over every axis except axis 1. In training mode batch
/// statistics are used and the running statistics are updated in place.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, bool training);

/// Four-gate LSTM step (gate order i, f, g, o). Returns (h', c').
std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c, const Tensor& w_ih,
                                    const Tensor& w_hh, const Tensor& bias);

/// Additive attention energies: out[b,j] = sum_a v[a] * tanh(enc[b,j,a] + dec[b,a]).
/// enc [B x N x A], dec [B x A], v [A] or [1 x A].
Tensor additive_scores(const Tensor& enc_proj, const Tensor& dec_proj, const Tensor& v);

/// Spatio-temporal scores: out[b,i,j,k] = x[b,i,k] * w[i,j,k].
/// x [B x T x S], w [T x S x S].
Tensor st_scores(const Tensor& x, const Tensor& w);

/// Selects positions along the last axis.
Tensor gather_last(const Tensor& x, const std::vector<std::size_t>& index);
/// Inverse placement of gather_last into a zero tensor with last extent `size`.
Tensor scatter_last(const Tensor& x, const std::vector<std::size_t>& index, std::size_t size);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace crann
