#include "crann/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

#include "crann/error.hpp"

namespace crann {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;
using CMapRow = Eigen::Map<const Eigen::RowVectorXd>;
using detail::make_result;
using detail::Node;

CMapM cmap(const Buffer& v, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return CMapM(v.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MapM map(Buffer& v, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return MapM(v.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Node& in(Node& self, std::size_t i) { return *self.inputs[i]; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
}

// Splits a shape into [outer, extent(axis), inner].
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};
AxisView axis_view(const Shape& s, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  v.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

// g[c] += sum_r m[r, c] for a row-major [rows x cols] block. Accumulates
// row by row so the order never depends on buffer alignment.
void add_column_sums(Buffer& g, const double* m, std::size_t rows, std::size_t cols) {
  Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) acc += Eigen::Map<const Eigen::ArrayXd>(m + r * cols, static_cast<Eigen::Index>(cols));
  Eigen::Map<Eigen::ArrayXd>(g.data(), static_cast<Eigen::Index>(cols)) += acc;
}

// tanh(x) = 1 - 2 / (exp(2x) + 1); Eigen vectorizes exp for doubles but not tanh.
template <class Expr>
auto fast_tanh(const Expr& x) {
  return 1.0 - 2.0 / ((2.0 * x).exp() + 1.0);
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto& xv = x.node()->value;
  Buffer out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(x.shape(), std::move(out), {x}, [deriv](Node& self) {
    auto& a = in(self, 0);
    if (!a.requires_grad) return;
    auto& ga = a.ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * deriv(a.value[i], self.value[i]);
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Buffer out(m * n);
  map(out, m, n).noalias() = cmap(a.node()->value, m, k) * cmap(b.node()->value, k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    auto dc = cmap(self.grad, m, n);
    auto& na = in(self, 0);
    auto& nb = in(self, 1);
    if (na.requires_grad) map(na.ensure_grad(), m, k).noalias() += dc * cmap(nb.value, k, n).transpose();
    if (nb.requires_grad) map(nb.ensure_grad(), k, n).noalias() += cmap(na.value, m, k).transpose() * dc;
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Buffer out(B * m * n);
  for (std::size_t i = 0; i < B; ++i)
    map(out, m, n, i * m * n).noalias() = cmap(a.node()->value, m, k, i * m * k) * cmap(b.node()->value, k, n, i * k * n);
  return make_result({B, m, n}, std::move(out), {a, b}, [B, m, k, n](Node& self) {
    auto& na = in(self, 0);
    auto& nb = in(self, 1);
    for (std::size_t i = 0; i < B; ++i) {
      auto dc = cmap(self.grad, m, n, i * m * n);
      if (na.requires_grad)
        map(na.ensure_grad(), m, k, i * m * k).noalias() += dc * cmap(nb.value, k, n, i * k * n).transpose();
      if (nb.requires_grad)
        map(nb.ensure_grad(), k, n, i * k * n).noalias() += cmap(na.value, m, k, i * m * k).transpose() * dc;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "linear", "weight");
  const std::size_t out_f = weight.dim(0), in_f = weight.dim(1);
  if (x.rank() < 1 || x.shape().back() != in_f)
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  if (bias.defined() && (bias.numel() != out_f))
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  const std::size_t rows = x.numel() / in_f;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  Buffer out(rows * out_f);
  auto y = map(out, rows, out_f);
  y.noalias() = cmap(x.node()->value, rows, in_f) * cmap(weight.node()->value, out_f, in_f).transpose();
  if (bias.defined()) y.rowwise() += CMapRow(bias.node()->value.data(), static_cast<Eigen::Index>(out_f));
  std::vector<Tensor> inputs{x, weight};
  const bool has_bias = bias.defined();
  if (has_bias) inputs.push_back(bias);
  return make_result(std::move(out_shape), std::move(out), std::move(inputs), [rows, in_f, out_f, has_bias](Node& self) {
    auto dy = cmap(self.grad, rows, out_f);
    auto& nx = in(self, 0);
    auto& nw = in(self, 1);
    if (nx.requires_grad) map(nx.ensure_grad(), rows, in_f).noalias() += dy * cmap(nw.value, out_f, in_f);
    if (nw.requires_grad) map(nw.ensure_grad(), out_f, in_f).noalias() += dy.transpose() * cmap(nx.value, rows, in_f);
    if (has_bias && in(self, 2).requires_grad) add_column_sums(in(self, 2).ensure_grad(), self.grad.data(), rows, out_f);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto &av = a.node()->value, &bv = b.node()->value;
  Buffer out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& n = in(self, k);
      if (!n.requires_grad) continue;
      auto& g = n.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto &av = a.node()->value, &bv = b.node()->value;
  Buffer out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    auto& na = in(self, 0);
    auto& nb = in(self, 1);
    if (na.requires_grad) {
      auto& g = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto &av = a.node()->value, &bv = b.node()->value;
  Buffer out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    auto& na = in(self, 0);
    auto& nb = in(self, 1);
    if (na.requires_grad) {
      auto& g = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.value[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.value[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank())
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  const auto v = axis_view(x.shape(), axis);
  const auto& xv = x.node()->value;
  Buffer out(xv.size());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.extent * v.inner + i;
      double mx = xv[base];
      for (std::size_t e = 1; e < v.extent; ++e) mx = std::max(mx, xv[base + e * v.inner]);
      double total = 0.0;
      for (std::size_t e = 0; e < v.extent; ++e) total += (out[base + e * v.inner] = std::exp(xv[base + e * v.inner] - mx));
      for (std::size_t e = 0; e < v.extent; ++e) out[base + e * v.inner] /= total;
    }
  return make_result(x.shape(), std::move(out), {x}, [v](Node& self) {
    auto& nx = in(self, 0);
    if (!nx.requires_grad) return;
    auto& g = nx.ensure_grad();
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = o * v.extent * v.inner + i;
        double dot = 0.0;
        for (std::size_t e = 0; e < v.extent; ++e) dot += self.grad[base + e * v.inner] * self.value[base + e * v.inner];
        for (std::size_t e = 0; e < v.extent; ++e) {
          const auto idx = base + e * v.inner;
          g[idx] += self.value[idx] * (self.grad[idx] - dot);
        }
      }
  });
}

Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = xs.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& t : xs) {
    const auto& s = t.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) throw DimensionError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(first));
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const auto v = axis_view(out_shape, axis);
  Buffer out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const auto& src = xs[t].node()->value;
    const std::size_t chunk = extents[t] * v.inner;
    for (std::size_t o = 0; o < v.outer; ++o)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.begin() + static_cast<std::ptrdiff_t>(o * v.extent * v.inner + offset));
    offset += chunk;
  }
  return make_result(std::move(out_shape), std::move(out), xs, [v, extents](Node& self) {
    std::size_t offset = 0;
    for (std::size_t t = 0; t < extents.size(); ++t) {
      const std::size_t chunk = extents[t] * v.inner;
      auto& n = in(self, t);
      if (n.requires_grad) {
        auto& g = n.ensure_grad();
        for (std::size_t o = 0; o < v.outer; ++o) {
          const double* src = self.grad.data() + o * v.extent * v.inner + offset;
          double* dst = g.data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
      offset += chunk;
    }
  });
}

Tensor stack(const std::vector<Tensor>& xs, std::size_t axis) {
  if (xs.empty()) throw DimensionError("stack: no inputs");
  if (axis > xs.front().rank()) throw DimensionError("stack: axis out of range for " + shape_str(xs.front().shape()));
  std::vector<Tensor> expanded;
  expanded.reserve(xs.size());
  for (const auto& t : xs) {
    if (t.shape() != xs.front().shape())
      throw DimensionError("stack: shape " + shape_str(t.shape()) + " differs from " + shape_str(xs.front().shape()));
    Shape s = t.shape();
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
    expanded.push_back(reshape(t, std::move(s)));
  }
  return concat(expanded, axis);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  return make_result(std::move(shape), x.node()->value, {x}, [](Node& self) {
    auto& nx = in(self, 0);
    if (!nx.requires_grad) return;
    auto& g = nx.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const auto rank = x.rank();
  std::vector<char> used(rank, 0);
  bool ok = perm.size() == rank;
  for (std::size_t i = 0; ok && i < rank; ++i) ok = perm[i] < rank && !used[perm[i]]++;
  if (!ok) throw DimensionError("permute: invalid axis order for " + shape_str(x.shape()));
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.dim(perm[i]);
  // src_index[o] maps every output position to its source position
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.dim(i);
  const auto n = x.numel();
  auto src = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t s = 0;
    for (std::size_t i = 0; i < rank; ++i) s += idx[i] * in_stride[perm[i]];
    (*src)[o] = s;
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  const auto& xv = x.node()->value;
  Buffer out(n);
  for (std::size_t o = 0; o < n; ++o) out[o] = xv[(*src)[o]];
  return make_result(std::move(out_shape), std::move(out), {x}, [src](Node& self) {
    auto& nx = in(self, 0);
    if (!nx.requires_grad) return;
    auto& g = nx.ensure_grad();
    for (std::size_t o = 0; o < src->size(); ++o) g[(*src)[o]] += self.grad[o];
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || length == 0 || start + length > x.dim(axis))
    throw DimensionError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") on axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  const auto v = axis_view(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const std::size_t chunk = length * v.inner;
  const auto& xv = x.node()->value;
  Buffer out(v.outer * chunk);
  for (std::size_t o = 0; o < v.outer; ++o)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(o * v.extent * v.inner + start * v.inner), chunk,
                out.begin() + static_cast<std::ptrdiff_t>(o * chunk));
  return make_result(std::move(out_shape), std::move(out), {x}, [v, start, chunk](Node& self) {
    auto& nx = in(self, 0);
    if (!nx.requires_grad) return;
    auto& g = nx.ensure_grad();
    for (std::size_t o = 0; o < v.outer; ++o) {
      double* dst = g.data() + o * v.extent * v.inner + start * v.inner;
      const double* src = self.grad.data() + o * chunk;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
    }
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.node()->value) total += v;
  return make_result({1}, {total}, {x}, [](Node& self) {
    auto& nx = in(self, 0);
    if (!nx.requires_grad) return;
    auto& g = nx.ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("mean_axis: axis invalid for " + shape_str(x.shape()));
  const auto v = axis_view(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape.push_back(1);
  const auto& xv = x.node()->value;
  Buffer out(v.outer * v.inner, 0.0);
  const double inv = 1.0 / static_cast<double>(v.extent);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t e = 0; e < v.extent; ++e)
      for (std::size_t i = 0; i < v.inner; ++i) out[o * v.inner + i] += xv[(o * v.extent + e) * v.inner + i] * inv;
  return make_result(std::move(out_shape), std::move(out), {x}, [v, inv](Node& self) {
    auto& nx = in(self, 0);
    if (!nx.requires_grad) return;
    auto& g = nx.ensure_grad();
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t e = 0; e < v.extent; ++e)
        for (std::size_t i = 0; i < v.inner; ++i) g[(o * v.extent + e) * v.inner + i] += self.grad[o * v.inner + i] * inv;
  });
}

Tensor mse(const Tensor& prediction, const Tensor& target) {
  require_same_shape(prediction, target, "mse");
  auto diff = sub(prediction, target);
  return mean(mul(diff, diff));
}

Tensor conv2d_same(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
  require_rank(kernels, 4, "conv2d_same", "kernels");
  if (kernels.dim(2) != 3 || kernels.dim(3) != 3)
    throw DimensionError("conv2d_same: kernels must be 3x3, got " + shape_str(kernels.shape()));
  const bool batched = input.rank() == 4;
  if (!batched && input.rank() != 3)
    throw DimensionError("conv2d_same: input must be [C x H x W] or [B x C x H x W], got " + shape_str(input.shape()));
  const std::size_t B = batched ? input.dim(0) : 1;
  const std::size_t C = input.dim(batched ? 1 : 0), H = input.dim(batched ? 2 : 1), W = input.dim(batched ? 3 : 2);
  const std::size_t K = kernels.dim(0);
  if (kernels.dim(1) != C)
    throw DimensionError("conv2d_same: input channels of " + shape_str(input.shape()) + " do not match kernels " +
                         shape_str(kernels.shape()));
  if (bias.defined() && bias.numel() != K)
    throw DimensionError("conv2d_same: bias " + shape_str(bias.shape()) + " does not match kernels " +
                         shape_str(kernels.shape()));
  const std::size_t HW = H * W, cols = B * HW, rows = C * 9;

  // im2col: rows (c, ky, kx), columns (b, y, x)
  const auto& xv = input.node()->value;
  Buffer col(rows * cols, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double* dst = col.data() + ((c * 3 + ky) * 3 + kx) * cols;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t y = 0; y < H; ++y) {
            const auto sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t x = 0; x < W; ++x) {
              const auto sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
              if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
              dst[b * HW + y * W + x] = xv[((b * C + c) * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)];
            }
          }
      }
  RowMat prod = cmap(kernels.node()->value, K, rows) * cmap(col, rows, cols);
  Buffer out(B * K * HW);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < K; ++k) {
      const double bk = bias.defined() ? bias.node()->value[k] : 0.0;
      for (std::size_t p = 0; p < HW; ++p) out[(b * K + k) * HW + p] = prod(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(b * HW + p)) + bk;
    }
  Shape out_shape = batched ? Shape{B, K, H, W} : Shape{K, H, W};
  std::vector<Tensor> inputs{input, kernels};
  const bool has_bias = bias.defined();
  if (has_bias) inputs.push_back(bias);
  return make_result(std::move(out_shape), std::move(out), std::move(inputs),
                     [col = std::move(col), B, C, H, W, K, HW, cols, rows, has_bias](Node& self) {
                       RowMat dout(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(cols));
                       for (std::size_t b = 0; b < B; ++b)
                         for (std::size_t k = 0; k < K; ++k)
                           for (std::size_t p = 0; p < HW; ++p)
                             dout(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(b * HW + p)) = self.grad[(b * K + k) * HW + p];
                       auto& nx = in(self, 0);
                       auto& nk = in(self, 1);
                       if (nk.requires_grad) map(nk.ensure_grad(), K, rows).noalias() += dout * cmap(col, rows, cols).transpose();
                       if (has_bias && in(self, 2).requires_grad) {
                         auto& gb = in(self, 2).ensure_grad();
                         for (std::size_t k = 0; k < K; ++k) gb[k] += dout.row(static_cast<Eigen::Index>(k)).sum();
                       }
                       if (!nx.requires_grad) return;
                       RowMat dcol = cmap(nk.value, K, rows).transpose() * dout;
                       auto& gx = nx.ensure_grad();
                       for (std::size_t c = 0; c < C; ++c)
                         for (std::size_t ky = 0; ky < 3; ++ky)
                           for (std::size_t kx = 0; kx < 3; ++kx) {
                             const double* src = dcol.data() + ((c * 3 + ky) * 3 + kx) * cols;
                             for (std::size_t b = 0; b < B; ++b)
                               for (std::size_t y = 0; y < H; ++y) {
                                 const auto sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                                 if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
                                 for (std::size_t x = 0; x < W; ++x) {
                                   const auto sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
                                   if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
                                   gx[((b * C + c) * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)] +=
                                       src[b * HW + y * W + x];
                                 }
                               }
                           }
                     });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, bool training) {
  if (x.rank() < 2) throw DimensionError("batch_norm: input must have a channel axis, got " + shape_str(x.shape()));
  const std::size_t C = x.dim(1);
  if (gamma.numel() != C || beta.numel() != C || stats.running_mean.size() != C || stats.running_var.size() != C)
    throw DimensionError("batch_norm: channel count of " + shape_str(x.shape()) + " does not match parameters " +
                         shape_str(gamma.shape()));
  const auto v = axis_view(x.shape(), 1);
  const std::size_t count = v.outer * v.inner;
  const auto& xv = x.node()->value;
  Buffer mu(C, 0.0), inv_std(C, 0.0);
  if (training) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) s += xv[(o * C + c) * v.inner + i];
      const double m = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
          const double d = xv[(o * C + c) * v.inner + i] - m;
          ss += d * d;
        }
      const double var = ss / static_cast<double>(count);
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(var + stats.eps);
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      stats.running_mean[c] = (1.0 - stats.momentum) * stats.running_mean[c] + stats.momentum * m;
      stats.running_var[c] = (1.0 - stats.momentum) * stats.running_var[c] + stats.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = stats.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(stats.running_var[c] + stats.eps);
    }
  }
  const auto& gv = gamma.node()->value;
  const auto& bv = beta.node()->value;
  Buffer xhat(xv.size()), out(xv.size());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < v.inner; ++i) {
        const auto idx = (o * C + c) * v.inner + i;
        xhat[idx] = (xv[idx] - mu[c]) * inv_std[c];
        out[idx] = gv[c] * xhat[idx] + bv[c];
      }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std), v, C, count, training](Node& self) {
                       auto& nx = in(self, 0);
                       auto& ng = in(self, 1);
                       auto& nb = in(self, 2);
                       Buffer sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
                       for (std::size_t o = 0; o < v.outer; ++o)
                         for (std::size_t c = 0; c < C; ++c)
                           for (std::size_t i = 0; i < v.inner; ++i) {
                             const auto idx = (o * C + c) * v.inner + i;
                             sum_dy[c] += self.grad[idx];
                             sum_dy_xhat[c] += self.grad[idx] * xhat[idx];
                           }
                       if (ng.requires_grad) {
                         auto& g = ng.ensure_grad();
                         for (std::size_t c = 0; c < C; ++c) g[c] += sum_dy_xhat[c];
                       }
                       if (nb.requires_grad) {
                         auto& g = nb.ensure_grad();
                         for (std::size_t c = 0; c < C; ++c) g[c] += sum_dy[c];
                       }
                       if (!nx.requires_grad) return;
                       auto& gx = nx.ensure_grad();
                       const double n = static_cast<double>(count);
                       for (std::size_t o = 0; o < v.outer; ++o)
                         for (std::size_t c = 0; c < C; ++c) {
                           const double gam = ng.value[c];
                           for (std::size_t i = 0; i < v.inner; ++i) {
                             const auto idx = (o * C + c) * v.inner + i;
                             if (training)
                               gx[idx] += gam * inv_std[c] *
                                          (self.grad[idx] - sum_dy[c] / n - xhat[idx] * sum_dy_xhat[c] / n);
                             else
                               gx[idx] += gam * inv_std[c] * self.grad[idx];
                           }
                         }
                     });
}

std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c, const Tensor& w_ih,
                                    const Tensor& w_hh, const Tensor& bias) {
  require_rank(x, 2, "lstm_cell", "x");
  require_rank(h, 2, "lstm_cell", "h");
  require_rank(w_ih, 2, "lstm_cell", "w_ih");
  require_rank(w_hh, 2, "lstm_cell", "w_hh");
  const std::size_t B = x.dim(0), I = x.dim(1), H = h.dim(1);
  if (h.dim(0) != B || c.shape() != h.shape() || w_ih.dim(0) != 4 * H || w_ih.dim(1) != I || w_hh.dim(0) != 4 * H ||
      w_hh.dim(1) != H || bias.numel() != 4 * H)
    throw DimensionError("lstm_cell: inconsistent sizes x " + shape_str(x.shape()) + ", h " + shape_str(h.shape()) +
                         ", c " + shape_str(c.shape()) + ", w_ih " + shape_str(w_ih.shape()) + ", w_hh " +
                         shape_str(w_hh.shape()) + ", bias " + shape_str(bias.shape()));
  RowMat z = cmap(x.node()->value, B, I) * cmap(w_ih.node()->value, 4 * H, I).transpose();
  z.noalias() += cmap(h.node()->value, B, H) * cmap(w_hh.node()->value, 4 * H, H).transpose();
  z.rowwise() += CMapRow(bias.node()->value.data(), static_cast<Eigen::Index>(4 * H));
  // cache rows: [i | f | g | o | tanh(c')]
  Buffer cache(B * 5 * H);
  Buffer packed(B * 2 * H);
  {
    const auto Bi = static_cast<Eigen::Index>(B), Hi = static_cast<Eigen::Index>(H);
    auto gates = map(cache, B, 5 * H);
    auto hc_out = map(packed, B, 2 * H);
    auto sigm = [&](Eigen::Index col) {
      gates.block(0, col, Bi, Hi).array() = 1.0 / (1.0 + (-z.block(0, col, Bi, Hi).array()).exp());
    };
    sigm(0);
    sigm(Hi);
    sigm(3 * Hi);
    gates.block(0, 2 * Hi, Bi, Hi).array() = fast_tanh(z.block(0, 2 * Hi, Bi, Hi).array());
    hc_out.block(0, Hi, Bi, Hi).array() =
        gates.block(0, Hi, Bi, Hi).array() * cmap(c.node()->value, B, H).array() +
        gates.block(0, 0, Bi, Hi).array() * gates.block(0, 2 * Hi, Bi, Hi).array();
    gates.block(0, 4 * Hi, Bi, Hi).array() = fast_tanh(hc_out.block(0, Hi, Bi, Hi).array());
    hc_out.block(0, 0, Bi, Hi).array() = gates.block(0, 3 * Hi, Bi, Hi).array() * gates.block(0, 4 * Hi, Bi, Hi).array();
  }
  auto hc = make_result({B, 2 * H}, std::move(packed), {x, h, c, w_ih, w_hh, bias},
                        [cache = std::move(cache), B, I, H](Node& self) {
                          auto& nx = in(self, 0);
                          auto& nh = in(self, 1);
                          auto& nc = in(self, 2);
                          auto& nwi = in(self, 3);
                          auto& nwh = in(self, 4);
                          auto& nb = in(self, 5);
                          Buffer dz(B * 4 * H);
                          Buffer* gc = nc.requires_grad ? &nc.ensure_grad() : nullptr;
                          for (std::size_t b = 0; b < B; ++b) {
                            const double* gate = cache.data() + b * 5 * H;
                            for (std::size_t u = 0; u < H; ++u) {
                              const double ig = gate[u], fg = gate[H + u], gg = gate[2 * H + u], og = gate[3 * H + u],
                                           tc = gate[4 * H + u];
                              const double dh = self.grad[b * 2 * H + u];
                              const double dc = self.grad[b * 2 * H + H + u] + dh * og * (1.0 - tc * tc);
                              dz[b * 4 * H + u] = dc * gg * ig * (1.0 - ig);
                              dz[b * 4 * H + H + u] = dc * nc.value[b * H + u] * fg * (1.0 - fg);
                              dz[b * 4 * H + 2 * H + u] = dc * ig * (1.0 - gg * gg);
                              dz[b * 4 * H + 3 * H + u] = dh * tc * og * (1.0 - og);
                              if (gc) (*gc)[b * H + u] += dc * fg;
                            }
                          }
                          auto dzm = cmap(dz, B, 4 * H);
                          if (nwi.requires_grad) map(nwi.ensure_grad(), 4 * H, I).noalias() += dzm.transpose() * cmap(nx.value, B, I);
                          if (nwh.requires_grad) map(nwh.ensure_grad(), 4 * H, H).noalias() += dzm.transpose() * cmap(nh.value, B, H);
                          if (nb.requires_grad) add_column_sums(nb.ensure_grad(), dz.data(), B, 4 * H);
                          if (nx.requires_grad) map(nx.ensure_grad(), B, I).noalias() += dzm * cmap(nwi.value, 4 * H, I);
                          if (nh.requires_grad) map(nh.ensure_grad(), B, H).noalias() += dzm * cmap(nwh.value, 4 * H, H);
                        });
  return {slice(hc, 1, 0, H), slice(hc, 1, H, H)};
}

Tensor additive_scores(const Tensor& enc_proj, const Tensor& dec_proj, const Tensor& v) {
  require_rank(enc_proj, 3, "additive_scores", "encoder projection");
  require_rank(dec_proj, 2, "additive_scores", "decoder projection");
  const std::size_t B = enc_proj.dim(0), N = enc_proj.dim(1), A = enc_proj.dim(2);
  if (dec_proj.dim(0) != B || dec_proj.dim(1) != A || v.numel() != A)
    throw DimensionError("additive_scores: inconsistent shapes " + shape_str(enc_proj.shape()) + ", " +
                         shape_str(dec_proj.shape()) + ", " + shape_str(v.shape()));
  const auto& ev = enc_proj.node()->value;
  const auto& dv = dec_proj.node()->value;
  const auto& vv = v.node()->value;
  const bool keep = grad_mode_enabled() &&
                    (enc_proj.requires_grad() || dec_proj.requires_grad() || v.requires_grad());
  // The activations are kept for backward only when a graph is recorded.
  auto act = std::make_shared<Buffer>(keep ? B * N * A : 0);
  Buffer out(B * N);
  using CVec = Eigen::Map<const Eigen::ArrayXd>;
  using Vec = Eigen::Map<Eigen::ArrayXd>;
  const auto Ai = static_cast<Eigen::Index>(A);
  // Row-at-a-time keeps the exp vectorized; a rowwise broadcast over the
  // whole [N x A] block does not. The reduction runs on owned (aligned)
  // arrays: over a Map, Eigen peels a heap-address-dependent head off the
  // sum, which makes results vary from run to run in the last bits.
  const Eigen::ArrayXd vvec = CVec(vv.data(), Ai);
  Eigen::ArrayXd t(Ai);
  for (std::size_t b = 0; b < B; ++b) {
    const CVec d(dv.data() + b * A, Ai);
    for (std::size_t j = 0; j < N; ++j) {
      t = fast_tanh(CVec(ev.data() + (b * N + j) * A, Ai) + d);
      out[b * N + j] = (t * vvec).sum();
      if (keep) Vec(act->data() + (b * N + j) * A, Ai) = t;
    }
  }
  if (!keep) act.reset();
  return make_result({B, N}, std::move(out), {enc_proj, dec_proj, v}, [B, N, A, act](Node& self) {
    auto& ne = in(self, 0);
    auto& nd = in(self, 1);
    auto& nv = in(self, 2);
    using CVec = Eigen::Map<const Eigen::ArrayXd>;
    using Vec = Eigen::Map<Eigen::ArrayXd>;
    const auto Ai = static_cast<Eigen::Index>(A);
    Buffer* ge = ne.requires_grad ? &ne.ensure_grad() : nullptr;
    Buffer* gd = nd.requires_grad ? &nd.ensure_grad() : nullptr;
    Buffer* gv = nv.requires_grad ? &nv.ensure_grad() : nullptr;
    const CVec vrow(nv.value.data(), Ai);
    Eigen::ArrayXd dpre(Ai), dd(Ai), dvsum(Ai);
    for (std::size_t b = 0; b < B; ++b) {
      dd.setZero();
      dvsum.setZero();
      for (std::size_t j = 0; j < N; ++j) {
        const double ds = self.grad[b * N + j];
        if (ds == 0.0) continue;
        const CVec t(act->data() + (b * N + j) * A, Ai);
        if (gv) dvsum += ds * t;
        if (!ge && !gd) continue;
        dpre = ds * vrow * (1.0 - t.square());
        if (ge) Vec(ge->data() + (b * N + j) * A, Ai) += dpre;
        dd += dpre;
      }
      if (gd) Vec(gd->data() + b * A, Ai) += dd;
      if (gv) Vec(gv->data(), Ai) += dvsum;
    }
  });
}

Tensor st_scores(const Tensor& x, const Tensor& w) {
  require_rank(x, 3, "st_scores", "activation");
  require_rank(w, 3, "st_scores", "attention tensor");
  const std::size_t B = x.dim(0), T = x.dim(1), S = x.dim(2);
  if (w.dim(0) != T || w.dim(1) != S || w.dim(2) != S)
    throw DimensionError("st_scores: activation " + shape_str(x.shape()) + " incompatible with attention tensor " +
                         shape_str(w.shape()));
  const auto& xv = x.node()->value;
  const auto& wv = w.node()->value;
  Buffer out(B * T * S * S);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < T; ++i)
      for (std::size_t j = 0; j < S; ++j)
        for (std::size_t k = 0; k < S; ++k)
          out[((b * T + i) * S + j) * S + k] = xv[(b * T + i) * S + k] * wv[(i * S + j) * S + k];
  return make_result({B, T, S, S}, std::move(out), {x, w}, [B, T, S](Node& self) {
    auto& nx = in(self, 0);
    auto& nw = in(self, 1);
    Buffer* gx = nx.requires_grad ? &nx.ensure_grad() : nullptr;
    Buffer* gw = nw.requires_grad ? &nw.ensure_grad() : nullptr;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j < S; ++j)
          for (std::size_t k = 0; k < S; ++k) {
            const double g = self.grad[((b * T + i) * S + j) * S + k];
            if (gx) (*gx)[(b * T + i) * S + k] += g * nw.value[(i * S + j) * S + k];
            if (gw) (*gw)[(i * S + j) * S + k] += g * nx.value[(b * T + i) * S + k];
          }
  });
}

Tensor gather_last(const Tensor& x, const std::vector<std::size_t>& index) {
  const std::size_t P = x.shape().back();
  for (auto p : index)
    if (p >= P) throw DimensionError("gather_last: index " + std::to_string(p) + " out of range for " + shape_str(x.shape()));
  if (index.empty()) throw DimensionError("gather_last: empty index");
  const std::size_t outer = x.numel() / P, n = index.size();
  Shape out_shape = x.shape();
  out_shape.back() = n;
  const auto& xv = x.node()->value;
  Buffer out(outer * n);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < n; ++i) out[o * n + i] = xv[o * P + index[i]];
  return make_result(std::move(out_shape), std::move(out), {x}, [index, outer, n, P](Node& self) {
    auto& nx = in(self, 0);
    if (!nx.requires_grad) return;
    auto& g = nx.ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < n; ++i) g[o * P + index[i]] += self.grad[o * n + i];
  });
}

Tensor scatter_last(const Tensor& x, const std::vector<std::size_t>& index, std::size_t size) {
  const std::size_t n = x.shape().back();
  if (index.size() != n) throw DimensionError("scatter_last: index length does not match " + shape_str(x.shape()));
  for (auto p : index)
    if (p >= size) throw DimensionError("scatter_last: index " + std::to_string(p) + " out of range " + std::to_string(size));
  const std::size_t outer = x.numel() / n;
  Shape out_shape = x.shape();
  out_shape.back() = size;
  const auto& xv = x.node()->value;
  Buffer out(outer * size, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < n; ++i) out[o * size + index[i]] = xv[o * n + i];
  return make_result(std::move(out_shape), std::move(out), {x}, [index, outer, n, size](Node& self) {
    auto& nx = in(self, 0);
    if (!nx.requires_grad) return;
    auto& g = nx.ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < n; ++i) g[o * n + i] += self.grad[o * size + index[i]];
  });
}

}  // namespace crann
