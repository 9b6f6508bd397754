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

#include "crqat/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "crqat/errors.hpp"
#include "crqat/rng.hpp"

namespace crqat {

namespace {

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;
constexpr std::size_t kCifarRecord = 1 + kCifarPixels;
constexpr std::size_t kCifarPerFile = 10000;
constexpr std::array<char, 4> kCacheMagic{'C', 'R', 'Q', 'S'};
constexpr std::uint32_t kCacheVersion = 1;

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big)
    v = ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  return v;
}

void read_cifar_file(const std::filesystem::path& file, std::size_t limit, std::vector<float>& pixels,
                     std::vector<int>& labels) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open CIFAR-10 batch " + file.string());
  std::vector<unsigned char> record(kCifarRecord);
  for (std::size_t r = 0; r < limit; ++r) {
    in.read(reinterpret_cast<char*>(record.data()), static_cast<std::streamsize>(kCifarRecord));
    if (in.gcount() != static_cast<std::streamsize>(kCifarRecord))
      throw IoError("truncated CIFAR-10 batch " + file.string() + " at byte offset " +
                    std::to_string(r * kCifarRecord + static_cast<std::size_t>(in.gcount())));
    if (record[0] > 9)
      throw IoError("CIFAR-10 batch " + file.string() + ": label " + std::to_string(record[0]) +
                    " at byte offset " + std::to_string(r * kCifarRecord));
    labels.push_back(record[0]);
    for (std::size_t i = 0; i < kCifarPixels; ++i) pixels.push_back(static_cast<float>(record[1 + i]) / 255.0f);
  }
}

Dataset make_dataset(std::vector<float> pixels, std::vector<int> labels, std::size_t classes, std::string split,
                     std::size_t channels = 3, std::size_t side = kCifarSide) {
  Dataset d;
  const std::size_t n = labels.size();
  if (n == 0) throw InputError("dataset '" + split + "' is empty");
  d.images = Tensor({n, channels, side, side}, std::move(pixels));
  d.labels = std::move(labels);
  d.num_classes = classes;
  d.split = std::move(split);
  return d;
}

// HSV in [0,1]^3 to RGB.
std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double k = h * 6.0;
  const int sector = static_cast<int>(k) % 6;
  const double f = k - std::floor(k);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = 0, g = 0, b = 0;
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

constexpr std::size_t kShapeKinds = 5;

bool inside_shape(std::size_t kind, double dx, double dy, double r) {
  const double d = std::sqrt(dx * dx + dy * dy);
  switch (kind) {
    case 0: return d < r;                                        // disk
    case 1: return std::abs(dx) < 0.8 * r && std::abs(dy) < 0.8 * r;  // square
    case 2: return d < r && d > 0.55 * r;                        // ring
    case 3:                                                      // plus
      return (std::abs(dx) < 0.3 * r && std::abs(dy) < r) || (std::abs(dy) < 0.3 * r && std::abs(dx) < r);
    default: {                                                   // triangle, apex up
      if (dy < -r || dy > 0.8 * r) return false;
      return std::abs(dx) < (dy + r) / 1.8;
    }
  }
}

void draw_sample(Rng& rng, int label, std::size_t classes, std::span<float> out) {
  constexpr std::size_t side = kCifarSide, plane = side * side;
  const std::size_t bands = (classes + kShapeKinds - 1) / kShapeKinds;
  const std::size_t kind = static_cast<std::size_t>(label) % kShapeKinds;
  const std::size_t band = static_cast<std::size_t>(label) / kShapeKinds;

  // Background: random colour with a linear gradient.
  std::array<double, 3> base{};
  for (auto& b : base) b = rng.uniform(0.05, 0.55);
  const double gx = rng.uniform(-0.25, 0.25), gy = rng.uniform(-0.25, 0.25);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x)
        out[c * plane + y * side + x] = static_cast<float>(
            base[c] + gx * (static_cast<double>(x) / side - 0.5) + gy * (static_cast<double>(y) / side - 0.5));

  auto paint = [&](std::size_t shape, double cx, double cy, double r, const std::array<float, 3>& rgb) {
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x)
        if (inside_shape(shape, static_cast<double>(x) - cx, static_cast<double>(y) - cy, r))
          for (std::size_t c = 0; c < 3; ++c) out[c * plane + y * side + x] = rgb[c];
  };

  // Distractor blob, painted first so the class shape stays on top.
  if (rng.uniform() < 0.6) {
    const auto rgb = hsv_to_rgb(rng.uniform(), rng.uniform(0.2, 1.0), rng.uniform(0.3, 1.0));
    paint(0, rng.uniform(4, 28), rng.uniform(4, 28), rng.uniform(1.5, 3.0), rgb);
  }

  // Each band keeps 60% of its hue slice; the gaps keep bands apart on the hue circle.
  const double hue = (static_cast<double>(band) + rng.uniform(0.0, 0.6)) / static_cast<double>(bands);
  const auto rgb = hsv_to_rgb(hue, rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0));
  const double r = rng.uniform(6.5, 11.0);
  paint(kind, rng.uniform(r * 0.6 + 2, side - r * 0.6 - 2), rng.uniform(r * 0.6 + 2, side - r * 0.6 - 2), r, rgb);

  for (auto& v : out) v = std::clamp(static_cast<float>(v + 0.05 * rng.normal()), 0.0f, 1.0f);
}

}  // namespace

Normalization Normalization::identity(std::size_t channels) {
  return {std::vector<float>(channels, 0.0f), std::vector<float>(channels, 1.0f)};
}

Normalization Normalization::from_images(const Tensor& images) {
  const std::size_t n = images.dim(0), c = images.dim(1), plane = images.dim(2) * images.dim(3);
  Normalization norm;
  norm.mean.resize(c);
  norm.stddev.resize(c);
  const auto x = images.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < plane; ++p) {
        const double v = x[(i * c + ch) * plane + p];
        s += v;
        s2 += v * v;
      }
    const double count = static_cast<double>(n * plane);
    const double m = s / count;
    const double var = std::max(s2 / count - m * m, 0.0);
    norm.mean[ch] = static_cast<float>(m);
    norm.stddev[ch] = static_cast<float>(std::max(std::sqrt(var), 1e-6));
  }
  return norm;
}

void Normalization::apply(std::span<const float> image, std::size_t channels, std::span<float> out) const {
  const std::size_t plane = image.size() / channels;
  for (std::size_t c = 0; c < channels; ++c) {
    const float m = mean[c], inv = 1.0f / stddev[c];
    for (std::size_t p = 0; p < plane; ++p) out[c * plane + p] = (image[c * plane + p] - m) * inv;
  }
}

Tensor Dataset::image(std::size_t i) const {
  const auto src = image_data(i);
  return Tensor({channels(), height(), width()}, std::vector<float>(src.begin(), src.end()));
}

Dataset Dataset::subset(std::span<const std::size_t> indices, std::string split_name) const {
  std::vector<float> pixels;
  pixels.reserve(indices.size() * image_size());
  std::vector<int> y;
  y.reserve(indices.size());
  for (auto i : indices) {
    if (i >= size()) throw InputError("subset: index " + std::to_string(i) + " out of range");
    const auto src = image_data(i);
    pixels.insert(pixels.end(), src.begin(), src.end());
    y.push_back(labels[i]);
  }
  Dataset d = make_dataset(std::move(pixels), std::move(y), num_classes, std::move(split_name), channels(), height());
  d.normalization = normalization;
  return d;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (auto y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

Tensor Dataset::normalized_batch(std::span<const std::size_t> indices) const {
  const std::size_t sz = image_size();
  std::vector<float> out(indices.size() * sz);
  for (std::size_t k = 0; k < indices.size(); ++k)
    normalization.apply(image_data(indices[k]), channels(), std::span<float>(out).subspan(k * sz, sz));
  return Tensor({indices.size(), channels(), height(), width()}, std::move(out));
}

void Dataset::validate() const {
  if (!images.defined() || images.rank() != 4) throw InputError("dataset images must be [N,C,H,W]");
  if (images.dim(0) != labels.size())
    throw InputError("dataset has " + std::to_string(images.dim(0)) + " images but " + std::to_string(labels.size()) +
                     " labels");
  for (auto y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw InputError("dataset label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
  for (auto v : images.data())
    if (!(v >= 0.0f && v <= 1.0f)) throw InputError("dataset pixel outside [0,1]");
}

UnlabeledPool::UnlabeledPool(const Dataset& source, std::vector<std::size_t> indices)
    : images_(source.images), indices_(std::move(indices)), image_shape_{source.channels(), source.height(), source.width()} {
  for (auto i : indices_)
    if (i >= source.size()) throw InputError("unlabeled pool: index " + std::to_string(i) + " out of range");
}

UnlabeledPool UnlabeledPool::from_dataset(const Dataset& source) {
  std::vector<std::size_t> all(source.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return UnlabeledPool(source, std::move(all));
}

std::span<const float> UnlabeledPool::image_data(std::size_t i) const {
  const std::size_t sz = numel(image_shape_);
  return images_.data().subspan(indices_[i] * sz, sz);
}

Tensor UnlabeledPool::image(std::size_t i) const {
  const auto src = image_data(i);
  return Tensor(image_shape_, std::vector<float>(src.begin(), src.end()));
}

DatasetPair load_cifar10(const std::filesystem::path& dir, std::size_t max_train, std::size_t max_test) {
  const std::size_t want_train = max_train ? std::min(max_train, 5 * kCifarPerFile) : 5 * kCifarPerFile;
  const std::size_t want_test = max_test ? std::min(max_test, kCifarPerFile) : kCifarPerFile;
  std::vector<float> pixels;
  std::vector<int> labels;
  pixels.reserve(want_train * kCifarPixels);
  for (std::size_t b = 1; b <= 5 && labels.size() < want_train; ++b)
    read_cifar_file(dir / ("data_batch_" + std::to_string(b) + ".bin"),
                    std::min(kCifarPerFile, want_train - labels.size()), pixels, labels);
  DatasetPair out;
  out.train = make_dataset(std::move(pixels), std::move(labels), 10, "train");
  out.train.normalization = Normalization::from_images(out.train.images);

  std::vector<float> test_pixels;
  std::vector<int> test_labels;
  read_cifar_file(dir / "test_batch.bin", want_test, test_pixels, test_labels);
  out.test = make_dataset(std::move(test_pixels), std::move(test_labels), 10, "test");
  out.test.normalization = out.train.normalization;
  return out;
}

Dataset make_synthetic(std::size_t n, std::size_t classes, std::uint64_t seed, std::string split) {
  if (n == 0 || classes == 0) throw InputError("make_synthetic: n and classes must be positive");
  if (classes > 255) throw InputError("make_synthetic: at most 255 classes");
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);
  Rng order(hash_key({seed, 0x5EEDull}));
  order.shuffle(std::span<int>(labels));

  std::vector<float> pixels(n * kCifarPixels);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(hash_key({seed, i}));
    draw_sample(rng, labels[i], classes, std::span<float>(pixels).subspan(i * kCifarPixels, kCifarPixels));
  }
  Dataset d = make_dataset(std::move(pixels), std::move(labels), classes, std::move(split));
  d.normalization = Normalization::from_images(d.images);
  return d;
}

DatasetPair make_synthetic_pair(std::size_t n_train, std::size_t n_test, std::size_t classes, std::uint64_t seed) {
  DatasetPair out;
  out.train = make_synthetic(n_train, classes, hash_key({seed, 1}), "train");
  out.test = make_synthetic(n_test, classes, hash_key({seed, 2}), "test");
  out.test.normalization = out.train.normalization;
  return out;
}

void save_synthetic_cache(const Dataset& data, const std::filesystem::path& file) {
  if (data.channels() != 3 || data.height() != kCifarSide || data.width() != kCifarSide)
    throw InputError("synthetic cache holds 3x32x32 images only");
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out.write(kCacheMagic.data(), 4);
  for (std::uint32_t v : {kCacheVersion, static_cast<std::uint32_t>(data.size()),
                          static_cast<std::uint32_t>(data.num_classes)}) {
    const auto le = to_little(v);
    out.write(reinterpret_cast<const char*>(&le), 4);
  }
  for (float v : data.images.data()) {
    const auto le = to_little(std::bit_cast<std::uint32_t>(v));
    out.write(reinterpret_cast<const char*>(&le), 4);
  }
  for (int y : data.labels) out.put(static_cast<char>(static_cast<unsigned char>(y)));
  if (!out) throw IoError("short write to " + file.string());
}

Dataset load_synthetic_cache(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open synthetic cache " + file.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || magic != kCacheMagic) throw IoError(file.string() + ": bad magic at byte offset 0");
  std::array<std::uint32_t, 3> header{};
  for (auto& h : header) {
    in.read(reinterpret_cast<char*>(&h), 4);
    h = to_little(h);
  }
  if (!in) throw IoError(file.string() + ": truncated header");
  if (header[0] != kCacheVersion) throw IoError(file.string() + ": unsupported version " + std::to_string(header[0]));
  const std::size_t n = header[1], classes = header[2];
  std::vector<float> pixels(n * kCifarPixels);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    std::uint32_t raw = 0;
    in.read(reinterpret_cast<char*>(&raw), 4);
    if (!in) throw IoError(file.string() + ": truncated pixel data at byte offset " + std::to_string(16 + 4 * i));
    pixels[i] = std::bit_cast<float>(to_little(raw));
  }
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = in.get();
    if (c == EOF)
      throw IoError(file.string() + ": truncated labels at byte offset " + std::to_string(16 + 4 * pixels.size() + i));
    labels[i] = c;
  }
  Dataset d = make_dataset(std::move(pixels), std::move(labels), classes, "train");
  d.normalization = Normalization::from_images(d.images);
  d.validate();
  return d;
}

CalibrationSample sample_calibration(const Dataset& train, std::size_t n, std::uint64_t seed) {
  if (n > train.size())
    throw UsageError("sample_calibration: requested " + std::to_string(n) + " samples from " +
                     std::to_string(train.size()));
  if (n == 0) throw UsageError("sample_calibration: requested zero samples");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(hash_key({seed, 0xCA1Bull}));
  rng.shuffle(std::span<std::size_t>(order));
  order.resize(n);
  CalibrationSample out;
  out.data = train.subset(order, "calibration");
  out.indices = std::move(order);
  out.class_counts = out.data.class_counts();
  out.classes_covered =
      static_cast<std::size_t>(std::count_if(out.class_counts.begin(), out.class_counts.end(), [](auto c) { return c > 0; }));
  return out;
}

UnlabeledPool LabeledSplit::unlabeled_view() const {
  return pool.empty() ? UnlabeledPool::from_dataset(labeled) : pool;
}

LabeledSplit split_labeled(const Dataset& train, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ConfigError("split_labeled: fraction " + std::to_string(fraction) + " outside (0, 1]");
  LabeledSplit out;
  if (fraction == 1.0) {
    out.labeled = train;
    out.labeled_indices.resize(train.size());
    std::iota(out.labeled_indices.begin(), out.labeled_indices.end(), std::size_t{0});
    return out;
  }
  std::vector<std::vector<std::size_t>> by_class(train.num_classes);
  for (std::size_t i = 0; i < train.size(); ++i) by_class[static_cast<std::size_t>(train.labels[i])].push_back(i);
  Rng rng(hash_key({seed, 0x5B117ull}));
  std::vector<char> chosen(train.size(), 0);
  for (auto& members : by_class) {
    rng.shuffle(std::span<std::size_t>(members));
    const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
    for (std::size_t k = 0; k < take && k < members.size(); ++k) chosen[members[k]] = 1;
  }
  for (std::size_t i = 0; i < train.size(); ++i) (chosen[i] ? out.labeled_indices : out.pool_indices).push_back(i);
  if (out.labeled_indices.empty()) throw ConfigError("split_labeled: fraction selects no labeled samples");
  out.labeled = train.subset(out.labeled_indices, "labeled");
  out.pool = UnlabeledPool(train, out.pool_indices);
  return out;
}

}  // namespace crqat
