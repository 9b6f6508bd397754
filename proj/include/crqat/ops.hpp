/**
 * Copyright 2026 The crqat Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef CRQAT_OPS_HPP_
#define CRQAT_OPS_HPP_

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "crqat/tensor.hpp"

// Differentiable operations. Every op checks its input extents, records a
// backward closure when any input needs a gradient, and rejects non-finite
// outputs. Reductions accumulate in double; matrix products go through
// Eigen in the tensor's own scalar type.

namespace crqat {

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMatrix = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMapMatrix = Eigen::Map<const RowMatrix<T>>;

inline void require_rank(const char* op, const Shape& shape, std::size_t rank, const char* name) {
  if (shape.size() != rank)
    throw DimensionError(std::string(op) + ": " + name + " must have rank " + std::to_string(rank) + ", got " +
                         to_string(shape));
}

inline void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) throw DimensionError(std::string(op) + ": shapes " + to_string(a) + " and " + to_string(b) + " differ");
}

}  // namespace detail

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape("add", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::record<T>("add", a.shape(), std::move(out), {a, b}, [](std::span<const T> g, auto inputs) {
    for (const auto& in : inputs) {
      if (!detail::wants_grad(in)) continue;
      auto& dst = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape("mul", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::record<T>("mul", a.shape(), std::move(out), {a, b}, [](std::span<const T> g, auto inputs) {
    const auto& x = inputs[0];
    const auto& y = inputs[1];
    if (detail::wants_grad(x)) {
      auto& dst = x->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * y->data[i];
    }
    if (detail::wants_grad(y)) {
      auto& dst = y->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * x->data[i];
    }
  });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return detail::record<T>("scale", a.shape(), std::move(out), {a}, [factor](std::span<const T> g, auto inputs) {
    auto& dst = inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * factor;
  });
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  double acc = 0.0;
  for (auto v : a.data()) acc += v;
  return detail::record<T>("sum", {1}, {static_cast<T>(acc)}, {a}, [](std::span<const T> g, auto inputs) {
    auto& dst = inputs[0]->grad_buffer();
    for (auto& d : dst) d += g[0];
  });
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  double acc = 0.0;
  for (auto v : a.data()) acc += v;
  const double n = static_cast<double>(a.numel());
  return detail::record<T>("mean", {1}, {static_cast<T>(acc / n)}, {a}, [n](std::span<const T> g, auto inputs) {
    auto& dst = inputs[0]->grad_buffer();
    const T share = static_cast<T>(static_cast<double>(g[0]) / n);
    for (auto& d : dst) d += share;
  });
}

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  std::vector<T> out(a.numel());
  const T* src = a.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(src[i], T{0});
  return detail::record<T>("relu", a.shape(), std::move(out), {a}, [](std::span<const T> g, auto inputs) {
    const T* x = inputs[0]->data.data();
    T* dst = inputs[0]->grad_buffer().data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += x[i] > T{0} ? g[i] : T{0};
  });
}

/// [N, ...] -> [N, prod(...)].
template <class T>
BasicTensor<T> flatten(const BasicTensor<T>& a) {
  if (a.rank() < 1) throw DimensionError("flatten: empty shape");
  const std::size_t n = a.dim(0);
  Shape shape{n, a.numel() / n};
  return detail::record<T>("flatten", shape, a.values(), {a}, [](std::span<const T> g, auto inputs) {
    auto& dst = inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

/// Rows [begin, end) along axis 0.
template <class T>
BasicTensor<T> slice_rows(const BasicTensor<T>& a, std::size_t begin, std::size_t end) {
  if (a.rank() < 1 || begin >= end || end > a.dim(0))
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for axis 0 of " + to_string(a.shape()));
  const std::size_t row = a.numel() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = end - begin;
  std::vector<T> out(a.data().begin() + begin * row, a.data().begin() + end * row);
  return detail::record<T>("slice_rows", shape, std::move(out), {a}, [row, begin](std::span<const T> g, auto inputs) {
    auto& dst = inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) dst[begin * row + i] += g[i];
  });
}

/// Non-overlapping average pooling with a square window. Extents that the
/// window does not divide are floored: trailing rows and columns are dropped.
template <class T>
BasicTensor<T> avg_pool2d(const BasicTensor<T>& x, std::size_t window) {
  detail::require_rank("avg_pool2d", x.shape(), 4, "input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (window == 0 || window > h || window > w)
    throw DimensionError("avg_pool2d: window " + std::to_string(window) + " does not fit axes 2,3 of " +
                         to_string(x.shape()));
  const std::size_t ho = h / window, wo = w / window;
  const double inv = 1.0 / static_cast<double>(window * window);
  std::vector<T> out(n * c * ho * wo);
  const auto& in = x.values();
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        for (std::size_t ky = 0; ky < window; ++ky)
          for (std::size_t kx = 0; kx < window; ++kx)
            acc += in[(p * h + oy * window + ky) * w + ox * window + kx];
        out[(p * ho + oy) * wo + ox] = static_cast<T>(acc * inv);
      }
  return detail::record<T>(
      "avg_pool2d", {n, c, ho, wo}, std::move(out), {x}, [=](std::span<const T> g, auto inputs) {
        auto& dst = inputs[0]->grad_buffer();
        for (std::size_t p = 0; p < n * c; ++p)
          for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const T share = static_cast<T>(g[(p * ho + oy) * wo + ox] * inv);
              for (std::size_t ky = 0; ky < window; ++ky)
                for (std::size_t kx = 0; kx < window; ++kx) dst[(p * h + oy * window + ky) * w + ox * window + kx] += share;
            }
      });
}

namespace detail {

// Row-wise log-softmax over the last axis, computed in double.
template <class T>
std::vector<double> log_softmax_rows(std::span<const T> x, std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.data() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    const double lz = std::log(z) + mx;
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = static_cast<double>(row[j]) - lz;
  }
  return out;
}

inline std::pair<std::size_t, std::size_t> rows_cols(const char* op, const Shape& shape) {
  if (shape.empty() || shape.back() == 0) throw DimensionError(std::string(op) + ": empty last axis");
  const std::size_t cols = shape.back();
  return {numel(shape) / cols, cols};
}

}  // namespace detail

/// Softmax over the last axis.
template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& x) {
  const auto [rows, cols] = detail::rows_cols("softmax", x.shape());
  const auto logp = detail::log_softmax_rows<T>(x.data(), rows, cols);
  std::vector<T> out(logp.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(std::exp(logp[i]));
  auto probs = out;
  return detail::record<T>("softmax", x.shape(), std::move(out), {x},
                           [rows, cols, probs = std::move(probs)](std::span<const T> g, auto inputs) {
                             auto& dst = inputs[0]->grad_buffer();
                             for (std::size_t r = 0; r < rows; ++r) {
                               double dot = 0.0;
                               for (std::size_t j = 0; j < cols; ++j)
                                 dot += static_cast<double>(g[r * cols + j]) * probs[r * cols + j];
                               for (std::size_t j = 0; j < cols; ++j) {
                                 const std::size_t i = r * cols + j;
                                 dst[i] += static_cast<T>(probs[i] * (g[i] - dot));
                               }
                             }
                           });
}

template <class T>
BasicTensor<T> log_softmax(const BasicTensor<T>& x) {
  const auto [rows, cols] = detail::rows_cols("log_softmax", x.shape());
  const auto logp = detail::log_softmax_rows<T>(x.data(), rows, cols);
  std::vector<T> out(logp.begin(), logp.end());
  return detail::record<T>("log_softmax", x.shape(), std::move(out), {x},
                           [rows, cols, logp](std::span<const T> g, auto inputs) {
                             auto& dst = inputs[0]->grad_buffer();
                             for (std::size_t r = 0; r < rows; ++r) {
                               double gsum = 0.0;
                               for (std::size_t j = 0; j < cols; ++j) gsum += g[r * cols + j];
                               for (std::size_t j = 0; j < cols; ++j) {
                                 const std::size_t i = r * cols + j;
                                 dst[i] += static_cast<T>(g[i] - std::exp(logp[i]) * gsum);
                               }
                             }
                           });
}

/// Mean over the batch of -log softmax(logits)[label].
template <class T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  detail::require_rank("cross_entropy", logits.shape(), 2, "logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for axis 0 of extent " +
                         std::to_string(n));
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
      throw InputError("cross_entropy: label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                       " outside [0, " + std::to_string(c) + ")");
  const auto logp = detail::log_softmax_rows<T>(logits.data(), n, c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) loss -= logp[i * c + static_cast<std::size_t>(labels[i])];
  loss /= static_cast<double>(n);
  std::vector<int> y(labels.begin(), labels.end());
  return detail::record<T>("cross_entropy", {1}, {static_cast<T>(loss)}, {logits},
                           [n, c, logp, y = std::move(y)](std::span<const T> g, auto inputs) {
                             auto& dst = inputs[0]->grad_buffer();
                             const double scale = static_cast<double>(g[0]) / static_cast<double>(n);
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < c; ++j) {
                                 const double p = std::exp(logp[i * c + j]);
                                 const double target = static_cast<std::size_t>(y[i]) == j ? 1.0 : 0.0;
                                 dst[i * c + j] += static_cast<T>(scale * (p - target));
                               }
                           });
}

/// Mean squared difference over all elements.
template <class T>
BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape("mse", a.shape(), b.shape());
  const double n = static_cast<double>(a.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return detail::record<T>("mse", {1}, {static_cast<T>(acc / n)}, {a, b}, [n](std::span<const T> g, auto inputs) {
    const auto& x = inputs[0]->data;
    const auto& y = inputs[1]->data;
    const double k = 2.0 * static_cast<double>(g[0]) / n;
    if (detail::wants_grad(inputs[0])) {
      auto& dst = inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < x.size(); ++i) dst[i] += static_cast<T>(k * (static_cast<double>(x[i]) - y[i]));
    }
    if (detail::wants_grad(inputs[1])) {
      auto& dst = inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < x.size(); ++i) dst[i] -= static_cast<T>(k * (static_cast<double>(x[i]) - y[i]));
    }
  });
}

/// Mean over rows of KL(softmax(target) || softmax(input)).
template <class T>
BasicTensor<T> kl_divergence(const BasicTensor<T>& target_logits, const BasicTensor<T>& input_logits) {
  detail::require_same_shape("kl_divergence", target_logits.shape(), input_logits.shape());
  const auto [rows, cols] = detail::rows_cols("kl_divergence", target_logits.shape());
  const auto logp = detail::log_softmax_rows<T>(target_logits.data(), rows, cols);
  const auto logq = detail::log_softmax_rows<T>(input_logits.data(), rows, cols);
  std::vector<double> row_kl(rows, 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) {
      const std::size_t i = r * cols + j;
      row_kl[r] += std::exp(logp[i]) * (logp[i] - logq[i]);
    }
    total += row_kl[r];
  }
  const double n = static_cast<double>(rows);
  return detail::record<T>(
      "kl_divergence", {1}, {static_cast<T>(total / n)}, {target_logits, input_logits},
      [=, rows = rows, cols = cols](std::span<const T> g, auto inputs) {
        const double k = static_cast<double>(g[0]) / n;
        if (detail::wants_grad(inputs[0])) {
          auto& dst = inputs[0]->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < cols; ++j) {
              const std::size_t i = r * cols + j;
              dst[i] += static_cast<T>(k * std::exp(logp[i]) * (logp[i] - logq[i] - row_kl[r]));
            }
        }
        if (detail::wants_grad(inputs[1])) {
          auto& dst = inputs[1]->grad_buffer();
          for (std::size_t i = 0; i < rows * cols; ++i)
            dst[i] += static_cast<T>(k * (std::exp(logq[i]) - std::exp(logp[i])));
        }
      });
}

/// x [N,D] times weight [M,D] transposed, plus bias [M] when defined.
template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias = {}) {
  detail::require_rank("linear", x.shape(), 2, "input");
  detail::require_rank("linear", weight.shape(), 2, "weight");
  const std::size_t n = x.dim(0), d = x.dim(1), m = weight.dim(0);
  if (weight.dim(1) != d)
    throw DimensionError("linear: input axis 1 has extent " + std::to_string(d) + " but weight axis 1 has " +
                         std::to_string(weight.dim(1)));
  if (bias.defined() && bias.shape() != Shape{m})
    throw DimensionError("linear: bias shape " + to_string(bias.shape()) + " does not match weight axis 0 (" +
                         std::to_string(m) + ")");
  std::vector<T> out(n * m);
  {
    detail::ConstMapMatrix<T> X(x.data().data(), n, d);
    detail::ConstMapMatrix<T> W(weight.data().data(), m, d);
    detail::MapMatrix<T> Y(out.data(), n, m);
    Y.noalias() = X * W.transpose();
    if (bias.defined())
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out[i * m + j] += bias[j];
  }
  std::vector<BasicTensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return detail::record<T>("linear", {n, m}, std::move(out), std::move(inputs), [=](std::span<const T> g, auto in) {
    detail::ConstMapMatrix<T> G(g.data(), n, m);
    if (detail::wants_grad(in[0])) {
      detail::MapMatrix<T> dX(in[0]->grad_buffer().data(), n, d);
      dX.noalias() += G * detail::ConstMapMatrix<T>(in[1]->data.data(), m, d);
    }
    if (detail::wants_grad(in[1])) {
      detail::MapMatrix<T> dW(in[1]->grad_buffer().data(), m, d);
      dW.noalias() += G.transpose() * detail::ConstMapMatrix<T>(in[0]->data.data(), n, d);
    }
    if (in.size() > 2 && detail::wants_grad(in[2])) {
      auto& db = in[2]->grad_buffer();
      for (std::size_t j = 0; j < m; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += g[i * m + j];
        db[j] += static_cast<T>(acc);
      }
    }
  });
}

namespace detail {

inline constexpr std::size_t kConvChunkColumns = 2048;

struct ConvGeometry {
  std::size_t n, c, h, w, k, kh, kw, stride, pad, ho, wo;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t cols() const { return n * ho * wo; }
};

// col[(ci*kh+ky)*kw+kx, (b*ho+oy)*wo+ox] = x[b, ci, oy*s-p+ky, ox*s-p+kx]
template <class T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const std::size_t cols = g.cols();
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* dst = col + ((ci * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t b = 0; b < g.n; ++b) {
          const T* src = x + (b * g.c + ci) * g.h * g.w;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
            T* out = dst + (b * g.ho + oy) * g.wo;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
              std::fill(out, out + g.wo, T{0});
              continue;
            }
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
              out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T{0} : src[iy * g.w + ix];
            }
          }
        }
      }
}

template <class T>
void col2im(const ConvGeometry& g, const T* col, T* dx) {
  const std::size_t cols = g.cols();
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* src = col + ((ci * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t b = 0; b < g.n; ++b) {
          T* dst = dx + (b * g.c + ci) * g.h * g.w;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            const T* in = src + (b * g.ho + oy) * g.wo;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[iy * g.w + ix] += in[ox];
            }
          }
        }
      }
}

}  // namespace detail

/// Cross-correlation of x [N,C,H,W] with weight [K,C,kh,kw], plus bias [K]
/// when defined. Implemented as im2col followed by one matrix product.
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      std::size_t stride, std::size_t padding) {
  detail::require_rank("conv2d", x.shape(), 4, "input");
  detail::require_rank("conv2d", weight.shape(), 4, "weight");
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  detail::ConvGeometry geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), weight.dim(3),
                           stride, padding, 0, 0};
  if (weight.dim(1) != geo.c)
    throw DimensionError("conv2d: input axis 1 has " + std::to_string(geo.c) + " channels but weight axis 1 has " +
                         std::to_string(weight.dim(1)));
  if (geo.kh > geo.h + 2 * padding || geo.kw > geo.w + 2 * padding)
    throw DimensionError("conv2d: kernel axes 2,3 of " + to_string(weight.shape()) +
                         " exceed padded input axes 2,3 of " + to_string(x.shape()));
  if (bias.defined() && bias.shape() != Shape{geo.k})
    throw DimensionError("conv2d: bias shape " + to_string(bias.shape()) + " does not match weight axis 0");
  geo.ho = (geo.h + 2 * padding - geo.kh) / stride + 1;
  geo.wo = (geo.w + 2 * padding - geo.kw) / stride + 1;

  // Samples go through GEMM in chunks of about kConvChunkColumns columns so
  // the column buffer stays cache-sized; backward rebuilds it per chunk.
  const std::size_t patch = geo.patch(), plane = geo.ho * geo.wo, in_plane = geo.c * geo.h * geo.w;
  const std::size_t chunk = std::clamp<std::size_t>(detail::kConvChunkColumns / plane, 1, geo.n);
  std::vector<T> col(patch * chunk * plane), prod(geo.k * chunk * plane);
  std::vector<T> out(geo.n * geo.k * plane);
  const detail::ConstMapMatrix<T> W(weight.data().data(), geo.k, patch);
  for (std::size_t b0 = 0; b0 < geo.n; b0 += chunk) {
    detail::ConvGeometry part = geo;
    part.n = std::min(chunk, geo.n - b0);
    const std::size_t cols = part.cols();
    detail::im2col(part, x.data().data() + b0 * in_plane, col.data());
    detail::MapMatrix<T>(prod.data(), geo.k, cols).noalias() = W * detail::ConstMapMatrix<T>(col.data(), patch, cols);
    for (std::size_t b = 0; b < part.n; ++b)
      for (std::size_t kk = 0; kk < geo.k; ++kk) {
        const T offset = bias.defined() ? bias[kk] : T{0};
        const T* src = prod.data() + kk * cols + b * plane;
        T* dst = out.data() + ((b0 + b) * geo.k + kk) * plane;
        for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + offset;
      }
  }

  std::vector<BasicTensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return detail::record<T>(
      "conv2d", {geo.n, geo.k, geo.ho, geo.wo}, std::move(out), std::move(inputs),
      [geo, chunk](std::span<const T> g, auto in) {
        const std::size_t patch = geo.patch(), plane = geo.ho * geo.wo, in_plane = geo.c * geo.h * geo.w;
        const bool want_x = detail::wants_grad(in[0]), want_w = detail::wants_grad(in[1]);
        if (in.size() > 2 && detail::wants_grad(in[2])) {
          auto& db = in[2]->grad_buffer();
          for (std::size_t kk = 0; kk < geo.k; ++kk) {
            double acc = 0.0;
            for (std::size_t b = 0; b < geo.n; ++b) {
              const T* src = g.data() + (b * geo.k + kk) * plane;
              for (std::size_t p = 0; p < plane; ++p) acc += src[p];
            }
            db[kk] += static_cast<T>(acc);
          }
        }
        if (!want_x && !want_w) return;
        std::vector<T> col(want_w ? patch * chunk * plane : 0), dcol(want_x ? patch * chunk * plane : 0);
        std::vector<T> gm(geo.k * chunk * plane);
        T* dx = want_x ? in[0]->grad_buffer().data() : nullptr;
        const detail::ConstMapMatrix<T> W(in[1]->data.data(), geo.k, patch);
        for (std::size_t b0 = 0; b0 < geo.n; b0 += chunk) {
          detail::ConvGeometry part = geo;
          part.n = std::min(chunk, geo.n - b0);
          const std::size_t cols = part.cols();
          // Upstream gradient as [K, chunk*Ho*Wo].
          for (std::size_t b = 0; b < part.n; ++b)
            for (std::size_t kk = 0; kk < geo.k; ++kk)
              std::copy_n(g.data() + ((b0 + b) * geo.k + kk) * plane, plane, gm.data() + kk * cols + b * plane);
          const detail::ConstMapMatrix<T> G(gm.data(), geo.k, cols);
          if (want_w) {
            detail::im2col(part, in[0]->data.data() + b0 * in_plane, col.data());
            detail::MapMatrix<T>(in[1]->grad_buffer().data(), geo.k, patch).noalias() +=
                G * detail::ConstMapMatrix<T>(col.data(), patch, cols).transpose();
          }
          if (want_x) {
            detail::MapMatrix<T>(dcol.data(), patch, cols).noalias() = W.transpose() * G;
            detail::col2im(part, dcol.data(), dx + b0 * in_plane);
          }
        }
      });
}

}  // namespace crqat

#endif  // CRQAT_OPS_HPP_
