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

#ifndef CRQAT_AUGMENTATION_HPP_
#define CRQAT_AUGMENTATION_HPP_

#include <cstdint>
#include <utility>
#include <variant>
#include <vector>

#include "crqat/tensor.hpp"

namespace crqat {

struct RandomHorizontalFlip {
  double probability = 0.5;
};
struct RandomTranslation {
  int max_shift = 4;  ///< pixels, both axes
};
/// Brightness, contrast and saturation factors are drawn uniformly from
/// [1 - strength, 1 + strength] and applied in that order.
struct ColorJitter {
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
};
struct RandomGrayscale {
  double probability = 0.2;
};
/// Nearest-neighbour rotation about the image centre, zero fill.
struct RandomRotation {
  double max_degrees = 15.0;
};

using Transform = std::variant<RandomHorizontalFlip, RandomTranslation, ColorJitter, RandomGrayscale, RandomRotation>;

struct AugmentationPolicy {
  std::vector<Transform> transforms;
  std::uint64_t seed = 0;

  /// RHF(0.5) + RT(4) + CJ(0.4).
  static AugmentationPolicy standard(std::uint64_t seed = 0);

  /// Throws ConfigError if a probability, shift or strength is out of range
  /// for images of the given extent.
  void validate(std::size_t height, std::size_t width) const;
};

/// Two views of one [C,H,W] image in [0,1]. View randomness is keyed by
/// (policy seed, sample_index, step, view, transform index) only.
std::pair<Tensor, Tensor> augment_two_views(const Tensor& image, const AugmentationPolicy& policy,
                                            std::uint64_t sample_index, std::uint64_t step);

/// One view; `view` selects the random substream.
Tensor augment_view(const Tensor& image, const AugmentationPolicy& policy, std::uint64_t sample_index,
                    std::uint64_t step, std::uint32_t view);

// Deterministic building blocks, exposed for tests and tools.
Tensor flip_horizontal(const Tensor& image);
/// Moves content dx columns right and dy rows down, zero padding.
Tensor translate(const Tensor& image, int dx, int dy);
Tensor rotate(const Tensor& image, double degrees);
Tensor grayscale(const Tensor& image);
Tensor adjust_color(const Tensor& image, double brightness, double contrast, double saturation);

}  // namespace crqat

#endif  // CRQAT_AUGMENTATION_HPP_
