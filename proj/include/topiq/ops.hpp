#pragma once

// Differentiable primitives. Every op validates its shapes, computes the
// forward value eagerly and, when recording, attaches a closure that
// accumulates into its inputs' gradient buffers.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

#include "topiq/tensor.hpp"

namespace topiq::ops {

namespace detail {

using topiq::detail::accum_target;
using topiq::detail::make_result;
using topiq::detail::Node;

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

/// `message` is a string or a callable producing one, built only on failure.
template <class M>
void require(bool ok, M&& message) {
  if (ok) return;
  if constexpr (std::is_invocable_v<M>) {
    throw ArgumentError(message());
  } else {
    throw ArgumentError(std::string(message));
  }
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), [&] { return std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()); });
}

template <class T>
void require_rank(const Tensor<T>& a, std::size_t rank, const char* op) {
  require(a.rank() == rank, [&] { return std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got " + shape_str(a.shape()); });
}

// Elementwise unary op with derivative expressed through (x, y).
template <class T, class F, class DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df) {
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xd[i]);
  return make_result<T>(x.shape(), std::move(out), {&x}, [x, df](const Node<T>& self) {
    T* gx = accum_target(x);
    auto xd = x.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * df(xd[i], self.data[i]);
  });
}

// im2col for a single C x H x W image; columns indexed by output position.
template <class T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, T* cols) {
  const std::size_t npos = oh * ow;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = cols + ((ci * k + ky) * k + kx) * npos;
        // valid ox satisfy 0 <= ox * stride + kx - pad < w
        const std::size_t ox_lo = kx >= pad ? 0 : (pad - kx + stride - 1) / stride;
        const std::size_t ox_hi = w + pad > kx ? std::min(ow, (w + pad - kx + stride - 1) / stride) : 0;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          T* dst = row + oy * ow;
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h) || ox_lo >= ox_hi) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          std::fill(dst, dst + ox_lo, T(0));
          const T* src = x + (ci * h + static_cast<std::size_t>(iy)) * w + (ox_lo * stride + kx - pad);
          for (std::size_t ox = ox_lo; ox < ox_hi; ++ox, src += stride) dst[ox] = *src;
          std::fill(dst + ox_hi, dst + ow, T(0));
        }
      }
    }
  }
}

template <class T>
void col2im(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, T* x) {
  const std::size_t npos = oh * ow;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = cols + ((ci * k + ky) * k + kx) * npos;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            x[(ci * h + iy) * w + ix] += row[oy * ow + ox];
          }
        }
      }
    }
  }
}

// Corner-aligned source coordinate of output index i.
inline void bilinear_source(std::size_t i, std::size_t in, std::size_t out, std::size_t& lo,
                            std::size_t& hi, double& frac) {
  if (out == 1 || in == 1) {
    lo = hi = 0;
    frac = 0.0;
    return;
  }
  const double pos = static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
  lo = std::min(static_cast<std::size_t>(std::floor(pos)), in - 1);
  hi = std::min(lo + 1, in - 1);
  frac = pos - static_cast<double>(lo);
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, [a, b](const detail::Node<T>& self) {
    if (T* ga = detail::accum_target(a))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    if (T* gb = detail::accum_target(b))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, [a, b](const detail::Node<T>& self) {
    if (T* ga = detail::accum_target(a))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    if (T* gb = detail::accum_target(b))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] -= self.grad[i];
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, [a, b](const detail::Node<T>& self) {
    if (T* ga = detail::accum_target(a))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * b[i];
    if (T* gb = detail::accum_target(b))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i] * a[i];
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return detail::unary(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset) {
  return detail::unary(x, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

/// Subgradient 0 at the kink.
template <class T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::abs(v); }, [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

/// Square root whose derivative is taken as 0 at the origin.
template <class T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::sqrt(std::max(v, T(0))); },
      [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

/// x^p for x >= 0; derivative taken as 0 at the origin.
template <class T>
Tensor<T> pow(const Tensor<T>& x, T p) {
  return detail::unary(
      x, [p](T v) { return std::pow(std::max(v, T(0)), p); },
      [p](T v, T) { return v > T(0) ? p * std::pow(v, p - T(1)) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x,
      // negative side as 1 - sigmoid(-v), so sigmoid(v) + sigmoid(-v) == 1 exactly
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        return T(1) - T(1) / (T(1) + std::exp(v));
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

/// GELU, tanh approximation; the backward differentiates the same formula.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T c = T(0.044715);
  return detail::unary(
      x,
      [](T v) { return T(0.5) * v * (T(1) + std::tanh(k * (v + c * v * v * v))); },
      [](T v, T) {
        const T t = std::tanh(k * (v + c * v * v * v));
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * k * (T(1) + T(3) * c * v * v);
      });
}

// ------------------------------------------------------------------ reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return detail::make_result<T>(Shape{1}, {total}, {&x}, [x](const detail::Node<T>& self) {
    T* gx = detail::accum_target(x);
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Mean over the rows of an N x D matrix, giving 1 x D.
template <class T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  detail::require_rank(x, 2, "mean_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<T> out(d, T(0));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) out[j] += x[r * d + j];
  for (auto& v : out) v /= static_cast<T>(n);
  return detail::make_result<T>(Shape{1, d}, std::move(out), {&x}, [x, n, d](const detail::Node<T>& self) {
    T* gx = detail::accum_target(x);
    const T inv = T(1) / static_cast<T>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += self.grad[j] * inv;
  });
}

/// Inclusive prefix sum of a 1-d tensor.
template <class T>
Tensor<T> cumsum(const Tensor<T>& x) {
  detail::require_rank(x, 1, "cumsum");
  std::vector<T> out(x.numel());
  T run = T(0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = run += x[i];
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, [x](const detail::Node<T>& self) {
    T* gx = detail::accum_target(x);
    T run = T(0);
    for (std::size_t i = self.grad.size(); i-- > 0;) gx[i] += run += self.grad[i];
  });
}

// ---------------------------------------------------------------- structural

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::require(shape_numel(shape) == x.numel(),
                  [&] { return "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape); });
  return detail::make_result<T>(std::move(shape), x.values(), {&x}, [x](const detail::Node<T>& self) {
    T* gx = detail::accum_target(x);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  detail::require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return detail::make_result<T>(Shape{c, r}, std::move(out), {&x}, [x, r, c](const detail::Node<T>& self) {
    T* gx = detail::accum_target(x);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += self.grad[j * r + i];
  });
}

/// C x H x W feature map to (H*W) x C token matrix.
template <class T>
Tensor<T> to_tokens(const Tensor<T>& x) {
  detail::require_rank(x, 3, "to_tokens");
  return transpose(reshape(x, Shape{x.dim(0), x.dim(1) * x.dim(2)}));
}

/// Concatenation along axis 0.
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "concat: no inputs");
  Shape shape = parts.front().shape();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    detail::require(p.rank() == shape.size() &&
                        std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1),
                    "concat: trailing extents differ");
    rows += p.dim(0);
  }
  shape[0] = rows;
  std::vector<T> out;
  out.reserve(shape_numel(shape));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return topiq::detail::make_result_list<T>(std::move(shape), std::move(out), parts,
                                            [parts](const detail::Node<T>& self) {
                                              std::size_t offset = 0;
                                              for (const auto& p : parts) {
                                                if (T* gp = detail::accum_target(p))
                                                  for (std::size_t i = 0; i < p.numel(); ++i)
                                                    gp[i] += self.grad[offset + i];
                                                offset += p.numel();
                                              }
                                            });
}

/// Columns [start, start+count) of an N x D matrix.
template <class T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t count) {
  detail::require_rank(x, 2, "slice_cols");
  const std::size_t n = x.dim(0), d = x.dim(1);
  detail::require(count > 0 && start + count <= d, "slice_cols: range out of bounds");
  std::vector<T> out(n * count);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < count; ++j) out[r * count + j] = x[r * d + start + j];
  return detail::make_result<T>(Shape{n, count}, std::move(out), {&x},
                                [x, n, d, start, count](const detail::Node<T>& self) {
                                  T* gx = detail::accum_target(x);
                                  for (std::size_t r = 0; r < n; ++r)
                                    for (std::size_t j = 0; j < count; ++j)
                                      gx[r * d + start + j] += self.grad[r * count + j];
                                });
}

/// Horizontal concatenation of N x D_k matrices.
template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t n = parts.front().dim(0);
  std::size_t d = 0;
  for (const auto& p : parts) {
    detail::require(p.rank() == 2 && p.dim(0) == n, "concat_cols: row counts differ");
    d += p.dim(1);
  }
  std::vector<T> out(n * d);
  std::size_t col = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < p.dim(1); ++j) out[r * d + col + j] = p[r * p.dim(1) + j];
    col += p.dim(1);
  }
  return topiq::detail::make_result_list<T>(Shape{n, d}, std::move(out), parts,
                                            [parts, n, d](const detail::Node<T>& self) {
                                              std::size_t col = 0;
                                              for (const auto& p : parts) {
                                                const std::size_t w = p.dim(1);
                                                if (T* gp = detail::accum_target(p))
                                                  for (std::size_t r = 0; r < n; ++r)
                                                    for (std::size_t j = 0; j < w; ++j)
                                                      gp[r * w + j] += self.grad[r * d + col + j];
                                                col += w;
                                              }
                                            });
}

/// Multiplies a C x H x W map by a 1 x H x W mask broadcast over channels.
template <class T>
Tensor<T> mul_channel_mask(const Tensor<T>& x, const Tensor<T>& mask) {
  detail::require_rank(x, 3, "mul_channel_mask");
  detail::require(mask.rank() == 3 && mask.dim(0) == 1 && mask.dim(1) == x.dim(1) && mask.dim(2) == x.dim(2),
                  [&] {
                    return "mul_channel_mask: mask " + shape_str(mask.shape()) + " vs input " + shape_str(x.shape());
                  });
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  std::vector<T> out(x.numel());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) out[ch * hw + p] = x[ch * hw + p] * mask[p];
  return detail::make_result<T>(x.shape(), std::move(out), {&x, &mask},
                                [x, mask, c, hw](const detail::Node<T>& self) {
                                  if (T* gx = detail::accum_target(x))
                                    for (std::size_t ch = 0; ch < c; ++ch)
                                      for (std::size_t p = 0; p < hw; ++p)
                                        gx[ch * hw + p] += self.grad[ch * hw + p] * mask[p];
                                  if (T* gm = detail::accum_target(mask))
                                    for (std::size_t ch = 0; ch < c; ++ch)
                                      for (std::size_t p = 0; p < hw; ++p)
                                        gm[p] += self.grad[ch * hw + p] * x[ch * hw + p];
                                });
}

// --------------------------------------------------------------- linear maps

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                  [&] {
                    return "matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " + shape_str(b.shape());
                  });
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<T> out(static_cast<std::size_t>(m * n));
  detail::MatMap<T>(out.data(), m, n).noalias() =
      detail::ConstMatMap<T>(a.data().data(), m, k) * detail::ConstMatMap<T>(b.data().data(), k, n);
  return detail::make_result<T>(Shape{a.dim(0), b.dim(1)}, std::move(out), {&a, &b},
                                [a, b, m, k, n](const detail::Node<T>& self) {
                                  detail::ConstMatMap<T> g(self.grad.data(), m, n);
                                  if (T* ga = detail::accum_target(a))
                                    detail::MatMap<T>(ga, m, k).noalias() +=
                                        g * detail::ConstMatMap<T>(b.data().data(), k, n).transpose();
                                  if (T* gb = detail::accum_target(b))
                                    detail::MatMap<T>(gb, k, n).noalias() +=
                                        detail::ConstMatMap<T>(a.data().data(), m, k).transpose() * g;
                                });
}

/// Per-row affine map: x (N x Din) * w (Din x Dout) + b (Dout).
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(0),
                  [&] { return "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()); });
  detail::require(b.rank() == 1 && b.dim(0) == w.dim(1), [&] { return "linear: bias " + shape_str(b.shape()); });
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  const auto din = static_cast<Eigen::Index>(x.dim(1));
  const auto dout = static_cast<Eigen::Index>(w.dim(1));
  std::vector<T> out(static_cast<std::size_t>(n * dout));
  detail::MatMap<T> y(out.data(), n, dout);
  y.noalias() = detail::ConstMatMap<T>(x.data().data(), n, din) * detail::ConstMatMap<T>(w.data().data(), din, dout);
  y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data().data(), dout);
  return detail::make_result<T>(Shape{x.dim(0), w.dim(1)}, std::move(out), {&x, &w, &b},
                                [x, w, b, n, din, dout](const detail::Node<T>& self) {
                                  detail::ConstMatMap<T> g(self.grad.data(), n, dout);
                                  if (T* gx = detail::accum_target(x))
                                    detail::MatMap<T>(gx, n, din).noalias() +=
                                        g * detail::ConstMatMap<T>(w.data().data(), din, dout).transpose();
                                  if (T* gw = detail::accum_target(w))
                                    detail::MatMap<T>(gw, din, dout).noalias() +=
                                        detail::ConstMatMap<T>(x.data().data(), n, din).transpose() * g;
                                  if (T* gb = detail::accum_target(b))
                                    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb, dout) += g.colwise().sum();
                                });
}

/// 2-d convolution of one C x H x W map with zero padding.
/// Weight layout: Cout x Cin x k x k; bias: Cout.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride,
                 std::size_t pad) {
  detail::require_rank(x, 3, "conv2d");
  detail::require(w.rank() == 4 && w.dim(2) == w.dim(3), "conv2d: weight must be Cout x Cin x k x k");
  detail::require(w.dim(1) == x.dim(0), [&] { return "conv2d: input channels " + std::to_string(x.dim(0)) +
                                            " vs weight " + shape_str(w.shape()); });
  detail::require(b.rank() == 1 && b.dim(0) == w.dim(0), [&] { return "conv2d: bias " + shape_str(b.shape()); });
  detail::require(stride >= 1, "conv2d: stride must be >= 1");
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  detail::require(h + 2 * pad >= k && wd + 2 * pad >= k, "conv2d: kernel larger than padded input");
  const std::size_t oh = (h + 2 * pad - k) / stride + 1;
  const std::size_t ow = (wd + 2 * pad - k) / stride + 1;
  const auto npos = static_cast<Eigen::Index>(oh * ow);
  const auto kdim = static_cast<Eigen::Index>(cin * k * k);
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);

  auto cols = std::make_shared<std::vector<T>>();
  const T* col_ptr = x.data().data();
  if (!pointwise) {
    cols->resize(static_cast<std::size_t>(kdim * npos));
    detail::im2col(x.data().data(), cin, h, wd, k, stride, pad, oh, ow, cols->data());
    col_ptr = cols->data();
  }
  std::vector<T> out(cout * oh * ow);
  detail::MatMap<T> y(out.data(), static_cast<Eigen::Index>(cout), npos);
  const detail::ConstMatMap<T> wmat(w.data().data(), static_cast<Eigen::Index>(cout), kdim);
  const detail::ConstMatMap<T> cmat(col_ptr, kdim, npos);
  if (cout <= 16) {
    y.noalias() = wmat.lazyProduct(cmat);
  } else {
    y.noalias() = wmat * cmat;
  }
  y.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(b.data().data(), static_cast<Eigen::Index>(cout));
  if (!x.requires_grad() && !w.requires_grad() && !b.requires_grad()) cols.reset();

  return detail::make_result<T>(
      Shape{cout, oh, ow}, std::move(out), {&x, &w, &b},
      [x, w, b, cols, pointwise, cin, h, wd, cout, k, stride, pad, oh, ow, npos, kdim](const detail::Node<T>& self) {
        const auto co = static_cast<Eigen::Index>(cout);
        detail::ConstMatMap<T> g(self.grad.data(), co, npos);
        const T* col_ptr = pointwise ? x.data().data() : cols->data();
        if (T* gw = detail::accum_target(w))
          detail::MatMap<T>(gw, co, kdim).noalias() += g * detail::ConstMatMap<T>(col_ptr, kdim, npos).transpose();
        if (T* gb = detail::accum_target(b))
          Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(gb, co) += g.rowwise().sum();
        if (T* gx = detail::accum_target(x)) {
          auto wt = detail::ConstMatMap<T>(w.data().data(), co, kdim).transpose();
          if (pointwise) {
            detail::MatMap<T>(gx, kdim, npos).noalias() += wt * g;
          } else {
            std::vector<T> gcols(static_cast<std::size_t>(kdim * npos));
            if (cout <= 16) {
              detail::MatMap<T>(gcols.data(), kdim, npos).noalias() = wt.lazyProduct(g);
            } else {
              detail::MatMap<T>(gcols.data(), kdim, npos).noalias() = wt * g;
            }
            detail::col2im(gcols.data(), cin, h, wd, k, stride, pad, oh, ow, gx);
          }
        }
      });
}

// ------------------------------------------------------------------- softmax

/// Softmax along `axis`, computed with max subtraction.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  detail::require(axis < x.rank(), [&] { return "softmax: axis " + std::to_string(axis) + " invalid for shape " +
                                       shape_str(x.shape()); });
  std::size_t outer = 1, inner = 1;
  const std::size_t len = x.dim(axis);
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = x[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, x[base + j * inner]);
      T total = T(0);
      for (std::size_t j = 0; j < len; ++j) total += out[base + j * inner] = std::exp(x[base + j * inner] - mx);
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  return detail::make_result<T>(x.shape(), std::move(out), {&x},
                                [x, outer, inner, len](const detail::Node<T>& self) {
                                  T* gx = detail::accum_target(x);
                                  for (std::size_t o = 0; o < outer; ++o) {
                                    for (std::size_t in = 0; in < inner; ++in) {
                                      const std::size_t base = o * len * inner + in;
                                      T dot = T(0);
                                      for (std::size_t j = 0; j < len; ++j)
                                        dot += self.grad[base + j * inner] * self.data[base + j * inner];
                                      for (std::size_t j = 0; j < len; ++j) {
                                        const std::size_t idx = base + j * inner;
                                        gx[idx] += self.data[idx] * (self.grad[idx] - dot);
                                      }
                                    }
                                  }
                                });
}

// ------------------------------------------------------------ spatial resampling

/// Mean over non-overlapping window x window blocks of a C x H x W map.
template <class T>
Tensor<T> window_avg_pool(const Tensor<T>& x, std::size_t window) {
  detail::require_rank(x, 3, "window_avg_pool");
  detail::require(window >= 1, "window_avg_pool: window must be >= 1");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  detail::require(h % window == 0 && w % window == 0,
                  [&] {
                    return "window_avg_pool: window " + std::to_string(window) + " does not divide " +
                           shape_str(x.shape());
                  });
  if (window == 1) return x;
  const std::size_t oh = h / window, ow = w / window;
  const T inv = T(1) / static_cast<T>(window * window);
  std::vector<T> out(c * oh * ow, T(0));
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) out[(ch * oh + y / window) * ow + xx / window] += x[(ch * h + y) * w + xx];
  for (auto& v : out) v *= inv;
  return detail::make_result<T>(Shape{c, oh, ow}, std::move(out), {&x},
                                [x, c, h, w, oh, ow, window, inv](const detail::Node<T>& self) {
                                  T* gx = detail::accum_target(x);
                                  for (std::size_t ch = 0; ch < c; ++ch)
                                    for (std::size_t y = 0; y < h; ++y)
                                      for (std::size_t xx = 0; xx < w; ++xx)
                                        gx[(ch * h + y) * w + xx] +=
                                            self.grad[(ch * oh + y / window) * ow + xx / window] * inv;
                                });
}

/// Bilinear interpolation of a C x H x W map, corner-aligned sampling grid.
template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  detail::require_rank(x, 3, "bilinear_resize");
  detail::require(out_h >= 1 && out_w >= 1, "bilinear_resize: target extents must be >= 1");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (out_h == h && out_w == w) return x;

  struct Tap {
    std::size_t lo, hi;
    T frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    for (std::size_t i = 0; i < out; ++i) {
      double frac;
      detail::bilinear_source(i, in, out, t[i].lo, t[i].hi, frac);
      t[i].frac = static_cast<T>(frac);
    }
    return t;
  };
  auto ty = std::make_shared<std::vector<Tap>>(taps(h, out_h));
  auto tx = std::make_shared<std::vector<Tap>>(taps(w, out_w));

  std::vector<T> out(c * out_h * out_w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* src = x.data().data() + ch * h * w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const Tap& a = (*ty)[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const Tap& bt = (*tx)[ox];
        const T top = src[a.lo * w + bt.lo] * (T(1) - bt.frac) + src[a.lo * w + bt.hi] * bt.frac;
        const T bot = src[a.hi * w + bt.lo] * (T(1) - bt.frac) + src[a.hi * w + bt.hi] * bt.frac;
        out[(ch * out_h + oy) * out_w + ox] = top * (T(1) - a.frac) + bot * a.frac;
      }
    }
  }
  return detail::make_result<T>(Shape{c, out_h, out_w}, std::move(out), {&x},
                                [x, ty, tx, c, h, w, out_h, out_w](const detail::Node<T>& self) {
                                  T* gx = detail::accum_target(x);
                                  for (std::size_t ch = 0; ch < c; ++ch) {
                                    T* dst = gx + ch * h * w;
                                    for (std::size_t oy = 0; oy < out_h; ++oy) {
                                      const Tap& a = (*ty)[oy];
                                      for (std::size_t ox = 0; ox < out_w; ++ox) {
                                        const Tap& bt = (*tx)[ox];
                                        const T g = self.grad[(ch * out_h + oy) * out_w + ox];
                                        dst[a.lo * w + bt.lo] += g * (T(1) - a.frac) * (T(1) - bt.frac);
                                        dst[a.lo * w + bt.hi] += g * (T(1) - a.frac) * bt.frac;
                                        dst[a.hi * w + bt.lo] += g * a.frac * (T(1) - bt.frac);
                                        dst[a.hi * w + bt.hi] += g * a.frac * bt.frac;
                                      }
                                    }
                                  }
                                });
}

}  // namespace topiq::ops
