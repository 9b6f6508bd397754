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

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <vector>

#include "crqat/dataset.hpp"
#include "crqat/metrics.hpp"
#include "crqat/trainer.hpp"

namespace crqat {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("crqat_dataset_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(Synthetic, DeterministicAndSeeded) {
  const Dataset a = make_synthetic(200, 10, 7), b = make_synthetic(200, 10, 7), c = make_synthetic(200, 10, 8);
  EXPECT_EQ(a.images.values(), b.images.values());
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.images.values(), c.images.values());
  EXPECT_EQ(a.images.shape(), (Shape{200, 3, 32, 32}));
  EXPECT_NO_THROW(a.validate());
}

TEST(Synthetic, ClassesBalancedWithinOne) {
  for (std::size_t n : {100u, 1003u, 5000u}) {
    const auto counts = make_synthetic(n, 10, 1).class_counts();
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    EXPECT_LE(*hi - *lo, 1u) << n;
    EXPECT_EQ(std::accumulate(counts.begin(), counts.end(), std::size_t{0}), n);
  }
}

TEST(Synthetic, PairSharesTrainNormalization) {
  const auto pair = make_synthetic_pair(100, 50, 10, 3);
  EXPECT_EQ(pair.test.normalization.mean, pair.train.normalization.mean);
  EXPECT_EQ(pair.test.normalization.stddev, pair.train.normalization.stddev);
  EXPECT_NE(pair.train.images.values()[0], pair.test.images.values()[0]);
}

TEST(Synthetic, CacheRoundTrip) {
  const auto dir = scratch("cache");
  const Dataset d = make_synthetic(40, 10, 2);
  save_synthetic_cache(d, dir / "s.bin");
  const Dataset back = load_synthetic_cache(dir / "s.bin");
  EXPECT_EQ(back.images.values(), d.images.values());
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.num_classes, d.num_classes);

  fs::resize_file(dir / "s.bin", fs::file_size(dir / "s.bin") - 5);
  EXPECT_THROW(load_synthetic_cache(dir / "s.bin"), IoError);
  EXPECT_THROW(load_synthetic_cache(dir / "missing.bin"), IoError);
}

void write_cifar_file(const fs::path& file, const std::vector<std::uint8_t>& labels, std::uint8_t pixel) {
  std::ofstream out(file, std::ios::binary);
  for (auto y : labels) {
    out.put(static_cast<char>(y));
    for (int i = 0; i < 3072; ++i) out.put(static_cast<char>(i == 0 ? 255 : pixel));
  }
}

TEST(Cifar10, ReadsBinaryRecords) {
  const auto dir = scratch("cifar");
  write_cifar_file(dir / "data_batch_1.bin", {6, 1, 6}, 51);
  write_cifar_file(dir / "test_batch.bin", {6}, 0);
  const auto pair = load_cifar10(dir, 3, 1);
  ASSERT_EQ(pair.train.size(), 3u);
  EXPECT_EQ(pair.train.labels, (std::vector<int>{6, 1, 6}));
  EXPECT_EQ(pair.train.images[0], 1.0f);
  EXPECT_FLOAT_EQ(pair.train.images[1], 0.2f);
  EXPECT_EQ(pair.test.labels, (std::vector<int>{6}));
  EXPECT_EQ(pair.test.images.shape(), (Shape{1, 3, 32, 32}));
}

TEST(Cifar10, TruncatedOrInvalidFiles) {
  const auto dir = scratch("cifar_bad");
  write_cifar_file(dir / "data_batch_1.bin", {6, 1}, 0);
  fs::resize_file(dir / "data_batch_1.bin", 3073 + 100);
  write_cifar_file(dir / "test_batch.bin", {2}, 0);
  EXPECT_THROW(load_cifar10(dir, 2, 1), IoError);
  write_cifar_file(dir / "data_batch_1.bin", {12}, 0);
  EXPECT_THROW(load_cifar10(dir, 1, 1), IoError);
  EXPECT_THROW(load_cifar10(dir / "absent", 1, 1), IoError);
}

TEST(Calibration, SampleWithoutReplacement) {
  const Dataset d = make_synthetic(100, 10, 4);
  const auto all = sample_calibration(d, 100, 1);
  EXPECT_EQ(std::set<std::size_t>(all.indices.begin(), all.indices.end()).size(), 100u);
  EXPECT_EQ(all.classes_covered, 10u);
  const auto some = sample_calibration(d, 30, 1);
  EXPECT_EQ(some.data.size(), 30u);
  EXPECT_EQ(some.indices, sample_calibration(d, 30, 1).indices);
  for (std::size_t k = 0; k < 30; ++k) EXPECT_EQ(some.data.labels[k], d.labels[some.indices[k]]);
  EXPECT_THROW(sample_calibration(d, 101, 1), UsageError);
  EXPECT_THROW(sample_calibration(d, 0, 1), UsageError);
}

TEST(Split, PartitionAndStratification) {
  const Dataset d = make_synthetic(500, 10, 5);
  const auto s = split_labeled(d, 0.2, 3);
  EXPECT_EQ(s.labeled_indices.size() + s.pool_indices.size(), 500u);
  std::vector<std::size_t> all(s.labeled_indices);
  all.insert(all.end(), s.pool_indices.begin(), s.pool_indices.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
  for (auto c : s.labeled.class_counts()) EXPECT_EQ(c, 10u);
  EXPECT_EQ(s.pool.size(), 400u);
  EXPECT_EQ(s.unlabeled_view().size(), 400u);

  const auto full = split_labeled(d, 1.0, 3);
  EXPECT_EQ(full.labeled.size(), 500u);
  EXPECT_TRUE(full.pool.empty());
  EXPECT_EQ(full.unlabeled_view().size(), 500u);

  EXPECT_THROW(split_labeled(d, 0.0, 3), ConfigError);
  EXPECT_THROW(split_labeled(d, 1.5, 3), ConfigError);
}

TEST(Dataset, ValidationRejectsBadInput) {
  Dataset d = make_synthetic(10, 3, 0);
  d.labels[0] = 3;
  EXPECT_THROW(d.validate(), InputError);
  d = make_synthetic(10, 3, 0);
  d.images[5] = 1.5f;
  EXPECT_THROW(d.validate(), InputError);
}

// Full-precision tinycnn must separate the synthetic classes.
TEST(SyntheticSlow, LearnableAtFullPrecision) {
  const auto pair = make_synthetic_pair(5000, 2000, 10, 0);
  ModelState m = build_model("tinycnn", 10, 8, 8, 0);
  m.quantization_enabled = false;
  const auto calib = sample_calibration(pair.train, 100, 0);
  std::vector<std::size_t> idx(100);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  calibrate_model(m, calib.data.normalized_batch(idx));
  TrainConfig cfg;
  cfg.cr_strength = 0.0;
  cfg.batch_size = 32;
  cfg.unlabeled_part = 0;
  cfg.base_lr = 0.05;
  cfg.epochs = 10;
  const auto res = train(m, cfg, {pair.train, UnlabeledPool{}});
  ASSERT_FALSE(res.diverged) << res.diagnostic;
  EXPECT_GT(evaluate_accuracy(res.student, pair.test, 2000, 0), 90.0);
}

}  // namespace
}  // namespace crqat
