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

#ifndef CRQAT_DATASET_HPP_
#define CRQAT_DATASET_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "crqat/tensor.hpp"

namespace crqat {

/// Per-channel constants applied as (x - mean) / stddev.
struct Normalization {
  std::vector<float> mean;
  std::vector<float> stddev;

  static Normalization identity(std::size_t channels);
  static Normalization from_images(const Tensor& images);
  /// Normalizes a [C,H,W] image into `out`.
  void apply(std::span<const float> image, std::size_t channels, std::span<float> out) const;
};

/// Labeled images [N,C,H,W] with values in [0,1].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::string split;
  Normalization normalization;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  std::size_t image_size() const { return images.numel() / images.dim(0); }

  std::span<const float> image_data(std::size_t i) const {
    return images.data().subspan(i * image_size(), image_size());
  }
  /// Copy of image i as [C,H,W].
  Tensor image(std::size_t i) const;
  /// Rows selected by `indices`, in that order. Normalization is inherited.
  Dataset subset(std::span<const std::size_t> indices, std::string split_name) const;
  std::vector<std::size_t> class_counts() const;
  /// Normalized [N,C,H,W] batch of the selected rows.
  Tensor normalized_batch(std::span<const std::size_t> indices) const;

  void validate() const;
};

/// Images without labels. The type has no label field so labels cannot
/// leak into the unlabeled stream.
class UnlabeledPool {
 public:
  UnlabeledPool() = default;
  /// The listed rows of `source`, labels dropped.
  UnlabeledPool(const Dataset& source, std::vector<std::size_t> indices);
  /// Every row of `source`, labels dropped.
  static UnlabeledPool from_dataset(const Dataset& source);

  std::size_t size() const { return indices_.size(); }
  bool empty() const { return indices_.empty(); }
  std::span<const float> image_data(std::size_t i) const;
  Tensor image(std::size_t i) const;
  std::size_t source_index(std::size_t i) const { return indices_[i]; }
  const Shape& image_shape() const { return image_shape_; }

 private:
  Tensor images_;
  std::vector<std::size_t> indices_;
  Shape image_shape_;
};

struct DatasetPair {
  Dataset train;
  Dataset test;
};

/// Reads data_batch_1..5.bin and test_batch.bin: records of one label byte
/// followed by 3072 bytes (R, G, B planes, row-major). Pixels scale by 1/255.
/// Zero limits mean "all records".
DatasetPair load_cifar10(const std::filesystem::path& dir, std::size_t max_train = 0, std::size_t max_test = 0);

/// Procedural 32x32 RGB images. The class fixes the shape type and hue
/// band; position, size, colour jitter, distractor and noise are random.
Dataset make_synthetic(std::size_t n, std::size_t classes, std::uint64_t seed, std::string split = "train");

/// Synthetic train and test splits from independent streams. The test split
/// carries the train split's normalization.
DatasetPair make_synthetic_pair(std::size_t n_train, std::size_t n_test, std::size_t classes, std::uint64_t seed);

/// Binary cache: "CRQS" magic, u32 version, u32 N, u32 classes, then N*3*32*32
/// little-endian f32 pixels and N label bytes.
void save_synthetic_cache(const Dataset& data, const std::filesystem::path& file);
Dataset load_synthetic_cache(const std::filesystem::path& file);

struct CalibrationSample {
  Dataset data;
  std::vector<std::size_t> indices;
  std::vector<std::size_t> class_counts;
  std::size_t classes_covered = 0;
};

/// n rows drawn uniformly without replacement.
CalibrationSample sample_calibration(const Dataset& train, std::size_t n, std::uint64_t seed);

struct LabeledSplit {
  Dataset labeled;
  std::vector<std::size_t> labeled_indices;
  std::vector<std::size_t> pool_indices;
  UnlabeledPool pool;  ///< rows not selected as labeled; empty when fraction == 1

  /// The pool, or the labeled images with labels dropped when the pool is empty.
  UnlabeledPool unlabeled_view() const;
};

/// Class-stratified split: round(fraction * n_c) rows of each class are labeled.
LabeledSplit split_labeled(const Dataset& train, double fraction, std::uint64_t seed);

}  // namespace crqat

#endif  // CRQAT_DATASET_HPP_
