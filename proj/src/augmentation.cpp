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

#include "crqat/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "crqat/rng.hpp"

namespace crqat {

namespace {

struct Dims {
  std::size_t c, h, w;
};

Dims image_dims(const Tensor& image) {
  if (image.rank() != 3) throw DimensionError("augmentation: expected a [C,H,W] image, got " + to_string(image.shape()));
  return {image.dim(0), image.dim(1), image.dim(2)};
}

// ITU-R BT.601 luma.
void luminance(const Tensor& image, std::vector<float>& gray) {
  const auto [c, h, w] = image_dims(image);
  const std::size_t plane = h * w;
  gray.assign(plane, 0.0f);
  const auto x = image.data();
  if (c != 3) {
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < plane; ++p) gray[p] += x[ch * plane + p] / static_cast<float>(c);
    return;
  }
  for (std::size_t p = 0; p < plane; ++p)
    gray[p] = 0.299f * x[p] + 0.587f * x[plane + p] + 0.114f * x[2 * plane + p];
}

void clip_unit(std::vector<float>& v) {
  for (auto& x : v) x = std::clamp(x, 0.0f, 1.0f);
}

}  // namespace

AugmentationPolicy AugmentationPolicy::standard(std::uint64_t seed) {
  return AugmentationPolicy{{RandomHorizontalFlip{0.5}, RandomTranslation{4}, ColorJitter{0.4, 0.4, 0.4}}, seed};
}

void AugmentationPolicy::validate(std::size_t height, std::size_t width) const {
  auto probability = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " probability must lie in [0,1]");
  };
  for (const auto& t : transforms) {
    if (auto* f = std::get_if<RandomHorizontalFlip>(&t)) probability(f->probability, "flip");
    if (auto* g = std::get_if<RandomGrayscale>(&t)) probability(g->probability, "grayscale");
    if (auto* r = std::get_if<RandomTranslation>(&t))
      if (r->max_shift < 0 || static_cast<std::size_t>(r->max_shift) > std::min(height, width))
        throw ConfigError("translation shift must lie in [0, image extent]");
    if (auto* j = std::get_if<ColorJitter>(&t))
      if (j->brightness < 0 || j->contrast < 0 || j->saturation < 0)
        throw ConfigError("color jitter strengths must be non-negative");
    if (auto* r = std::get_if<RandomRotation>(&t))
      if (r->max_degrees < 0) throw ConfigError("rotation degrees must be non-negative");
  }
}

Tensor flip_horizontal(const Tensor& image) {
  const auto [c, h, w] = image_dims(image);
  std::vector<float> out(image.numel());
  const auto x = image.data();
  for (std::size_t row = 0; row < c * h; ++row)
    for (std::size_t col = 0; col < w; ++col) out[row * w + col] = x[row * w + (w - 1 - col)];
  return Tensor(image.shape(), std::move(out));
}

Tensor translate(const Tensor& image, int dx, int dy) {
  const auto [c, h, w] = image_dims(image);
  std::vector<float> out(image.numel(), 0.0f);
  const auto x = image.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y) {
      const auto sy = static_cast<std::ptrdiff_t>(y) - dy;
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
      for (std::size_t col = 0; col < w; ++col) {
        const auto sx = static_cast<std::ptrdiff_t>(col) - dx;
        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
        out[(ch * h + y) * w + col] = x[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
      }
    }
  return Tensor(image.shape(), std::move(out));
}

Tensor rotate(const Tensor& image, double degrees) {
  const auto [c, h, w] = image_dims(image);
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
  std::vector<float> out(image.numel(), 0.0f);
  const auto x = image.data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t col = 0; col < w; ++col) {
      // Inverse map from destination to source.
      const double ry = static_cast<double>(y) - cy, rx = static_cast<double>(col) - cx;
      const auto sx = static_cast<std::ptrdiff_t>(std::lround(cs * rx + sn * ry + cx));
      const auto sy = static_cast<std::ptrdiff_t>(std::lround(-sn * rx + cs * ry + cy));
      if (sx < 0 || sy < 0 || sx >= static_cast<std::ptrdiff_t>(w) || sy >= static_cast<std::ptrdiff_t>(h)) continue;
      for (std::size_t ch = 0; ch < c; ++ch)
        out[(ch * h + y) * w + col] = x[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
    }
  return Tensor(image.shape(), std::move(out));
}

Tensor grayscale(const Tensor& image) {
  const auto [c, h, w] = image_dims(image);
  std::vector<float> gray;
  luminance(image, gray);
  std::vector<float> out(image.numel());
  for (std::size_t ch = 0; ch < c; ++ch) std::copy(gray.begin(), gray.end(), out.begin() + ch * h * w);
  return Tensor(image.shape(), std::move(out));
}

Tensor adjust_color(const Tensor& image, double brightness, double contrast, double saturation) {
  const auto [c, h, w] = image_dims(image);
  const std::size_t plane = h * w;
  std::vector<float> out(image.values());
  for (auto& v : out) v = static_cast<float>(v * brightness);
  clip_unit(out);

  std::vector<float> gray;
  luminance(Tensor(image.shape(), out), gray);
  double mean = 0.0;
  for (auto g : gray) mean += g;
  mean /= static_cast<double>(plane);
  for (auto& v : out) v = static_cast<float>((v - mean) * contrast + mean);
  clip_unit(out);

  luminance(Tensor(image.shape(), out), gray);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < plane; ++p) {
      auto& v = out[ch * plane + p];
      v = static_cast<float>((v - gray[p]) * saturation + gray[p]);
    }
  clip_unit(out);
  return Tensor(image.shape(), std::move(out));
}

Tensor augment_view(const Tensor& image, const AugmentationPolicy& policy, std::uint64_t sample_index,
                    std::uint64_t step, std::uint32_t view) {
  Tensor x = image.clone();
  for (std::size_t t = 0; t < policy.transforms.size(); ++t) {
    CounterRng rng(hash_key({policy.seed, sample_index, step, view, t}));
    std::visit(
        [&](const auto& tr) {
          using Kind = std::decay_t<decltype(tr)>;
          if constexpr (std::is_same_v<Kind, RandomHorizontalFlip>) {
            if (rng.uniform() < tr.probability) x = flip_horizontal(x);
          } else if constexpr (std::is_same_v<Kind, RandomTranslation>) {
            const auto dx = static_cast<int>(rng.between(-tr.max_shift, tr.max_shift));
            const auto dy = static_cast<int>(rng.between(-tr.max_shift, tr.max_shift));
            if (dx != 0 || dy != 0) x = translate(x, dx, dy);
          } else if constexpr (std::is_same_v<Kind, ColorJitter>) {
            const double b = rng.uniform(1.0 - tr.brightness, 1.0 + tr.brightness);
            const double c = rng.uniform(1.0 - tr.contrast, 1.0 + tr.contrast);
            const double s = rng.uniform(1.0 - tr.saturation, 1.0 + tr.saturation);
            x = adjust_color(x, std::max(b, 0.0), std::max(c, 0.0), std::max(s, 0.0));
          } else if constexpr (std::is_same_v<Kind, RandomGrayscale>) {
            if (rng.uniform() < tr.probability) x = grayscale(x);
          } else if constexpr (std::is_same_v<Kind, RandomRotation>) {
            const double deg = rng.uniform(-tr.max_degrees, tr.max_degrees);
            x = rotate(x, deg);
          }
        },
        policy.transforms[t]);
  }
  auto out = x.values();
  clip_unit(out);
  return Tensor(image.shape(), std::move(out));
}

std::pair<Tensor, Tensor> augment_two_views(const Tensor& image, const AugmentationPolicy& policy,
                                            std::uint64_t sample_index, std::uint64_t step) {
  return {augment_view(image, policy, sample_index, step, 1), augment_view(image, policy, sample_index, step, 2)};
}

}  // namespace crqat
