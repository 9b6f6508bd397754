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

#ifndef CRQAT_QUANTIZATION_HPP_
#define CRQAT_QUANTIZATION_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crqat/tensor.hpp"

namespace crqat {

enum class Granularity { kPerTensor, kPerChannel };

/// Step size assigned when calibration sees a zero-width range.
inline constexpr double kDegenerateStep = 1e-8;

/// Uniform affine quantizer parameters.
///
/// `step` and `zero_point` hold one entry for a per-tensor spec and one entry
/// per channel along `axis` for a per-channel spec. Zero points are frozen
/// integers; only the step size may be learned.
struct QuantSpec {
  int bits = 8;
  std::vector<float> step{1.0f};
  std::vector<std::int32_t> zero_point{0};
  std::optional<std::size_t> axis;
  bool step_learnable = true;
  bool zero_point_learnable = false;

  std::int64_t max_level() const { return (std::int64_t{1} << bits) - 1; }
  Granularity granularity() const { return axis ? Granularity::kPerChannel : Granularity::kPerTensor; }
  std::size_t groups() const { return step.size(); }

  /// Throws SpecError when an invariant is violated.
  void validate() const;
  /// validate() plus a DimensionError if the channel count does not match x.
  void validate_for(const Shape& shape) const;

  bool operator==(const QuantSpec&) const = default;
};

/// Maps a flat element index to its quantization group.
class GroupIndexer {
 public:
  GroupIndexer(const Shape& shape, const QuantSpec& spec);
  std::size_t operator()(std::size_t flat) const { return groups_ == 1 ? 0 : (flat / inner_) % groups_; }
  std::size_t group_size() const { return group_size_; }

  /// Calls f(group, begin, length) over contiguous runs of one group.
  template <class F>
  void for_each_run(F&& f) const {
    const std::size_t total = group_size_ * groups_;
    if (groups_ == 1) {
      f(std::size_t{0}, std::size_t{0}, total);
      return;
    }
    for (std::size_t begin = 0, g = 0; begin < total; begin += inner_, g = (g + 1) % groups_) f(g, begin, inner_);
  }

 private:
  std::size_t inner_ = 1;
  std::size_t groups_ = 1;
  std::size_t group_size_ = 1;
};

/// Running min/max over everything observed, per tensor or per channel.
class CalibrationObserver {
 public:
  static CalibrationObserver per_tensor() { return CalibrationObserver(std::nullopt); }
  static CalibrationObserver per_channel(std::size_t axis) { return CalibrationObserver(axis); }

  void observe(const Tensor& x);

  bool empty() const noexcept { return samples_ == 0; }
  std::size_t sample_count() const noexcept { return samples_; }
  std::optional<std::size_t> axis() const noexcept { return axis_; }
  const std::vector<float>& min() const noexcept { return min_; }
  const std::vector<float>& max() const noexcept { return max_; }

 private:
  explicit CalibrationObserver(std::optional<std::size_t> axis) : axis_(axis) {}

  std::optional<std::size_t> axis_;
  std::vector<float> min_;
  std::vector<float> max_;
  std::size_t samples_ = 0;
};

inline void observe(CalibrationObserver& observer, const Tensor& x) { observer.observe(x); }

struct CalibrationWarning {
  std::size_t channel = 0;
  std::string message;
};

/// s = (max - min) / (2^q - 1), z = clip(round(-min / s), 0, 2^q - 1).
/// A zero-width range gets s = kDegenerateStep, z = 0 and a warning.
QuantSpec calibrate(const CalibrationObserver& observer, int bits, std::vector<CalibrationWarning>* warnings = nullptr);

/// x_int = clip(round(x / s) + z, 0, 2^q - 1), rounding half away from zero.
std::int64_t quantize_level(double x, double step, std::int64_t zero_point, std::int64_t max_level);
std::vector<std::int32_t> quantize_levels(const Tensor& x, const QuantSpec& spec);

/// (x_int - z) * s for every element.
Tensor fake_quantize(const Tensor& x, const QuantSpec& spec);

/// Same forward as above with s read from `step` (shape [groups]). Records
/// the straight-through backward: gradients reach x, and reach `step` when
/// it requires a gradient.
Tensor fake_quantize(const Tensor& x, const Tensor& step, const QuantSpec& spec);

struct SteGradients {
  std::vector<float> grad_x;
  std::optional<std::vector<float>> grad_step;
};

/// 1 / sqrt(N * (2^q - 1)).
double step_grad_scale(std::size_t group_elements, int bits);

/// Straight-through gradients of fake_quantize for an upstream gradient.
/// grad_x passes upstream where x/s + z lies in [0, 2^q - 1]. grad_step is
/// present when spec.step_learnable.
SteGradients ste_backward(const Tensor& x, const QuantSpec& spec, std::span<const float> upstream);

}  // namespace crqat

#endif  // CRQAT_QUANTIZATION_HPP_
