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

#include "crqat/quantization.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace crqat {

void QuantSpec::validate() const {
  if (bits < 2 || bits > 16) throw SpecError("quant spec: bit-width " + std::to_string(bits) + " outside [2, 16]");
  if (step.empty()) throw SpecError("quant spec: no step size");
  if (step.size() != zero_point.size())
    throw SpecError("quant spec: " + std::to_string(step.size()) + " step sizes but " +
                    std::to_string(zero_point.size()) + " zero points");
  if (!axis && step.size() != 1) throw SpecError("quant spec: per-tensor spec must have exactly one step size");
  if (zero_point_learnable) throw SpecError("quant spec: learnable zero points are not supported");
  for (std::size_t i = 0; i < step.size(); ++i) {
    if (!(step[i] > 0.0f) || !std::isfinite(step[i]))
      throw SpecError("quant spec: step size " + std::to_string(step[i]) + " at group " + std::to_string(i) +
                      " is not positive");
    if (zero_point[i] < 0 || zero_point[i] > max_level())
      throw SpecError("quant spec: zero point " + std::to_string(zero_point[i]) + " at group " + std::to_string(i) +
                      " outside [0, " + std::to_string(max_level()) + "]");
  }
}

void QuantSpec::validate_for(const Shape& shape) const {
  validate();
  if (!axis) return;
  if (*axis >= shape.size())
    throw DimensionError("quant spec: channel axis " + std::to_string(*axis) + " out of range for " + to_string(shape));
  if (shape[*axis] != step.size())
    throw DimensionError("quant spec: axis " + std::to_string(*axis) + " has extent " + std::to_string(shape[*axis]) +
                         " but the spec has " + std::to_string(step.size()) + " channels");
}

GroupIndexer::GroupIndexer(const Shape& shape, const QuantSpec& spec) {
  const std::size_t total = numel(shape);
  if (spec.axis) {
    groups_ = shape[*spec.axis];
    for (std::size_t a = *spec.axis + 1; a < shape.size(); ++a) inner_ *= shape[a];
  }
  group_size_ = total / groups_;
}

void CalibrationObserver::observe(const Tensor& x) {
  std::size_t channels = 1, inner = 1;
  if (axis_) {
    if (*axis_ >= x.rank())
      throw DimensionError("observe: channel axis " + std::to_string(*axis_) + " out of range for " +
                           to_string(x.shape()));
    channels = x.dim(*axis_);
    for (std::size_t a = *axis_ + 1; a < x.rank(); ++a) inner *= x.dim(a);
  }
  if (empty()) {
    min_.assign(channels, std::numeric_limits<float>::infinity());
    max_.assign(channels, -std::numeric_limits<float>::infinity());
  } else if (min_.size() != channels) {
    throw DimensionError("observe: observer tracks " + std::to_string(min_.size()) + " channels, tensor " +
                         to_string(x.shape()) + " has " + std::to_string(channels));
  }
  const auto data = x.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t c = channels == 1 ? 0 : (i / inner) % channels;
    min_[c] = std::min(min_[c], data[i]);
    max_[c] = std::max(max_[c], data[i]);
  }
  ++samples_;
}

QuantSpec calibrate(const CalibrationObserver& observer, int bits, std::vector<CalibrationWarning>* warnings) {
  if (observer.empty()) throw UsageError("calibrate: observer has not seen any data");
  if (bits < 2 || bits > 16) throw SpecError("calibrate: bit-width " + std::to_string(bits) + " outside [2, 16]");
  QuantSpec spec;
  spec.bits = bits;
  spec.axis = observer.axis();
  const std::size_t channels = observer.min().size();
  spec.step.resize(channels);
  spec.zero_point.resize(channels);
  const double levels = static_cast<double>(spec.max_level());
  for (std::size_t c = 0; c < channels; ++c) {
    const double lo = observer.min()[c], hi = observer.max()[c];
    if (!(hi > lo)) {
      spec.step[c] = static_cast<float>(kDegenerateStep);
      spec.zero_point[c] = 0;
      if (warnings)
        warnings->push_back({c, "degenerate range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                                    "]; step set to 1e-8"});
      continue;
    }
    const double s = (hi - lo) / levels;
    spec.step[c] = static_cast<float>(s);
    const double z = std::round(-lo / static_cast<double>(spec.step[c]));
    spec.zero_point[c] = static_cast<std::int32_t>(std::clamp(z, 0.0, levels));
  }
  spec.validate();
  return spec;
}

namespace {

// Half away from zero, same result as std::round without the libm call.
inline double round_half_away(double v) {
  if (!(std::abs(v) < 0x1p52)) return v;  // already integral, or NaN
  const double t = static_cast<double>(static_cast<std::int64_t>(v));
  return t + std::copysign(static_cast<double>(std::abs(v - t) >= 0.5), v);
}

}  // namespace

std::int64_t quantize_level(double x, double step, std::int64_t zero_point, std::int64_t max_level) {
  const double v = round_half_away(x / step) + static_cast<double>(zero_point);
  return static_cast<std::int64_t>(std::clamp(v, 0.0, static_cast<double>(max_level)));
}

std::vector<std::int32_t> quantize_levels(const Tensor& x, const QuantSpec& spec) {
  spec.validate_for(x.shape());
  std::vector<std::int32_t> out(x.numel());
  const auto xs = x.data();
  const std::int64_t top = spec.max_level();
  GroupIndexer(x.shape(), spec).for_each_run([&](std::size_t g, std::size_t begin, std::size_t len) {
    for (std::size_t i = begin; i < begin + len; ++i)
      out[i] = static_cast<std::int32_t>(quantize_level(xs[i], spec.step[g], spec.zero_point[g], top));
  });
  return out;
}

namespace {

std::vector<float> quantize_forward(const Tensor& x, std::span<const float> step, const QuantSpec& spec) {
  std::vector<float> out(x.numel());
  const float* xs = x.data().data();
  const double top = static_cast<double>(spec.max_level());
  GroupIndexer(x.shape(), spec).for_each_run([&](std::size_t g, std::size_t begin, std::size_t len) {
    const double s = step[g], z = spec.zero_point[g];
    for (std::size_t i = begin; i < begin + len; ++i) {
      const double k = std::min(std::max(round_half_away(static_cast<double>(xs[i]) / s) + z, 0.0), top);
      out[i] = static_cast<float>((k - z) * s);
    }
  });
  return out;
}

// Writes per-element STE gradients. `grad_step` (may be null) receives the
// scaled per-group step gradient.
void ste_kernel(std::span<const float> x, const Shape& shape, std::span<const float> step, const QuantSpec& spec,
                std::span<const float> upstream, float* grad_x, float* grad_step) {
  const GroupIndexer group(shape, spec);
  const double top = static_cast<double>(spec.max_level());
  std::vector<double> acc(grad_step ? step.size() : 0, 0.0);
  group.for_each_run([&](std::size_t g, std::size_t begin, std::size_t len) {
    const double s = step[g], z = spec.zero_point[g];
    double a = 0.0;
    for (std::size_t i = begin; i < begin + len; ++i) {
      const double v = static_cast<double>(x[i]) / s;
      const double pos = v + z;
      const double below = static_cast<double>(pos < 0.0), above = static_cast<double>(pos > top);
      const double inside = 1.0 - below - above;
      if (grad_x) grad_x[i] += static_cast<float>(inside) * upstream[i];
      const double d = inside * (round_half_away(v) - v) - below * z + above * (top - z);
      a += static_cast<double>(upstream[i]) * d;
    }
    if (grad_step) acc[g] += a;
  });
  if (grad_step) {
    const double scale = step_grad_scale(group.group_size(), spec.bits);
    for (std::size_t g = 0; g < acc.size(); ++g) grad_step[g] += static_cast<float>(acc[g] * scale);
  }
}

}  // namespace

Tensor fake_quantize(const Tensor& x, const QuantSpec& spec) {
  spec.validate_for(x.shape());
  auto out = quantize_forward(x, spec.step, spec);
  return detail::record<float>("fake_quantize", x.shape(), std::move(out), {x},
                               [spec, shape = x.shape()](std::span<const float> g, auto in) {
                                 ste_kernel(in[0]->data, shape, spec.step, spec, g, in[0]->grad_buffer().data(),
                                            nullptr);
                               });
}

Tensor fake_quantize(const Tensor& x, const Tensor& step, const QuantSpec& spec) {
  if (step.shape() != Shape{spec.groups()})
    throw DimensionError("fake_quantize: step tensor shape " + to_string(step.shape()) + " does not match " +
                         std::to_string(spec.groups()) + " quantization groups");
  QuantSpec current = spec;
  current.step = step.values();
  current.validate_for(x.shape());
  auto out = quantize_forward(x, step.data(), current);
  return detail::record<float>(
      "fake_quantize", x.shape(), std::move(out), {x, step}, [current, shape = x.shape()](std::span<const float> g,
                                                                                          auto in) {
        float* gx = detail::wants_grad(in[0]) ? in[0]->grad_buffer().data() : nullptr;
        float* gs = detail::wants_grad(in[1]) && current.step_learnable ? in[1]->grad_buffer().data() : nullptr;
        ste_kernel(in[0]->data, shape, in[1]->data, current, g, gx, gs);
      });
}

double step_grad_scale(std::size_t group_elements, int bits) {
  const double levels = static_cast<double>((std::int64_t{1} << bits) - 1);
  return 1.0 / std::sqrt(static_cast<double>(group_elements) * levels);
}

SteGradients ste_backward(const Tensor& x, const QuantSpec& spec, std::span<const float> upstream) {
  spec.validate_for(x.shape());
  if (upstream.size() != x.numel())
    throw DimensionError("ste_backward: upstream has " + std::to_string(upstream.size()) + " elements, x has " +
                         std::to_string(x.numel()));
  SteGradients out;
  out.grad_x.assign(x.numel(), 0.0f);
  float* gs = nullptr;
  if (spec.step_learnable) {
    out.grad_step.emplace(spec.groups(), 0.0f);
    gs = out.grad_step->data();
  }
  ste_kernel(x.data(), x.shape(), spec.step, spec, upstream, out.grad_x.data(), gs);
  return out;
}

}  // namespace crqat
