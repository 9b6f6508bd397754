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

#include <cmath>
#include <vector>

#include "checks.hpp"
#include "crqat/quantization.hpp"

namespace crqat {
namespace {

QuantSpec scalar_spec(int bits, float step, std::int32_t zero) {
  QuantSpec q;
  q.bits = bits;
  q.step = {step};
  q.zero_point = {zero};
  return q;
}

float fq1(float x, const QuantSpec& spec) { return fake_quantize(Tensor({1}, {x}), spec)[0]; }

TEST(FakeQuantize, HandCases) {
  EXPECT_EQ(fq1(0.0f, scalar_spec(4, 0.5f, 0)), 0.0f);
  EXPECT_EQ(fq1(10.0f, scalar_spec(2, 1.0f, 0)), 3.0f);
  // round(-2.6) = -3; -3 + 2 = -1; clipped to 0; (0 - 2) * 0.5.
  EXPECT_EQ(fq1(-1.3f, scalar_spec(2, 0.5f, 2)), -1.0f);
}

TEST(FakeQuantize, RoundsHalfAwayFromZero) {
  EXPECT_EQ(quantize_level(2.5, 1.0, 0, 15), 3);
  EXPECT_EQ(quantize_level(-2.5, 1.0, 5, 15), 2);
  EXPECT_EQ(quantize_level(0.5, 1.0, 0, 15), 1);
  EXPECT_EQ(quantize_level(-0.5, 1.0, 4, 15), 3);
  EXPECT_EQ(quantize_level(1.4999999, 1.0, 0, 15), 1);
}

TEST(FakeQuantize, PerChannelUsesOwnStep) {
  QuantSpec q;
  q.bits = 4;
  q.axis = 0;
  q.step = {1.0f, 0.25f};
  q.zero_point = {0, 8};
  const Tensor x({2, 2}, {1.4f, 20.0f, 0.3f, -3.0f});
  // Row 1: 0.3 / 0.25 = 1.2 -> 1 + 8 = 9 -> 0.25; -3 / 0.25 = -12 -> clipped at 0 -> -2.
  EXPECT_EQ(fake_quantize(x, q).values(), (std::vector<float>{1.0f, 15.0f, 0.25f, -2.0f}));
}

TEST(QuantSpec, ValidatesInvariants) {
  EXPECT_THROW(scalar_spec(4, 0.0f, 0).validate(), SpecError);
  EXPECT_THROW(scalar_spec(4, -1.0f, 0).validate(), SpecError);
  EXPECT_THROW(scalar_spec(2, 1.0f, 4).validate(), SpecError);
  EXPECT_THROW(scalar_spec(2, 1.0f, -1).validate(), SpecError);
  EXPECT_THROW(scalar_spec(1, 1.0f, 0).validate(), SpecError);
  QuantSpec q = scalar_spec(4, 1.0f, 0);
  q.axis = 0;
  q.step = {1.0f, 1.0f};
  q.zero_point = {0, 0};
  EXPECT_NO_THROW(q.validate());
  EXPECT_THROW(fake_quantize(Tensor({3, 2}, std::vector<float>(6, 0.0f)), q), DimensionError);
  q.zero_point = {0};
  EXPECT_THROW(q.validate(), SpecError);
}

TEST(Calibration, HandCases) {
  auto obs = CalibrationObserver::per_tensor();
  obs.observe(Tensor({2}, {-3.0f, 3.0f}));
  auto q = calibrate(obs, 2);
  EXPECT_EQ(q.step[0], 2.0f);
  EXPECT_EQ(q.zero_point[0], 2);

  auto obs2 = CalibrationObserver::per_tensor();
  obs2.observe(Tensor({2}, {0.0f, 15.0f}));
  q = calibrate(obs2, 4);
  EXPECT_EQ(q.step[0], 1.0f);
  EXPECT_EQ(q.zero_point[0], 0);
}

TEST(Calibration, DegenerateRangeWarns) {
  auto obs = CalibrationObserver::per_tensor();
  obs.observe(Tensor({3}, {0.0f, 0.0f, 0.0f}));
  std::vector<CalibrationWarning> warnings;
  const auto q = calibrate(obs, 4, &warnings);
  EXPECT_EQ(q.step[0], static_cast<float>(kDegenerateStep));
  EXPECT_EQ(q.zero_point[0], 0);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Calibration, EmptyObserverIsUsageError) {
  EXPECT_THROW(calibrate(CalibrationObserver::per_tensor(), 4), UsageError);
}

TEST(Calibration, ResultSatisfiesInvariants) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    auto obs = CalibrationObserver::per_channel(0);
    std::vector<float> v(4 * 6);
    const double shift = rng.uniform(-3.0, 3.0);
    for (auto& x : v) x = static_cast<float>(shift + rng.uniform(-2.0, 2.0));
    obs.observe(Tensor({4, 6}, v));
    const auto q = calibrate(obs, static_cast<int>(rng.between(2, 8)));
    EXPECT_NO_THROW(q.validate_for({4, 6}));
  }
}

TEST(Observer, RunningExtrema) {
  auto obs = CalibrationObserver::per_tensor();
  EXPECT_TRUE(obs.empty());
  obs.observe(Tensor({3}, {1, 2, 3}));
  obs.observe(Tensor({1}, {-5}));
  EXPECT_EQ(obs.min()[0], -5.0f);
  EXPECT_EQ(obs.max()[0], 3.0f);

  const Tensor batch({2, 2}, {0.5f, -1.0f, 7.0f, 2.0f});
  auto once = CalibrationObserver::per_tensor();
  once.observe(batch);
  auto twice = once;
  twice.observe(batch);
  EXPECT_EQ(once.min(), twice.min());
  EXPECT_EQ(once.max(), twice.max());
}

TEST(Observer, PerChannelMatchesBruteForce) {
  Rng rng(9);
  const Shape shape{3, 4, 2, 2};
  auto obs = CalibrationObserver::per_channel(1);
  std::vector<float> lo(4, 1e30f), hi(4, -1e30f);
  for (int batch = 0; batch < 3; ++batch) {
    std::vector<float> v(numel(shape));
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = static_cast<float>(rng.uniform(-10.0, 10.0));
      const auto c = checks::channel_of(shape, 1, i);
      lo[c] = std::min(lo[c], v[i]);
      hi[c] = std::max(hi[c], v[i]);
    }
    obs.observe(Tensor(shape, v));
  }
  EXPECT_EQ(obs.min(), lo);
  EXPECT_EQ(obs.max(), hi);
}

TEST(Ste, HandCases) {
  const auto q = scalar_spec(2, 1.0f, 0);
  const std::vector<float> one{1.0f};
  EXPECT_EQ(ste_backward(Tensor({1}, {1.2f}), q, one).grad_x[0], 1.0f);
  EXPECT_EQ(ste_backward(Tensor({1}, {50.0f}), q, one).grad_x[0], 0.0f);
  EXPECT_EQ(ste_backward(Tensor({1}, {-50.0f}), q, one).grad_x[0], 0.0f);
  const auto g = ste_backward(Tensor({1}, {0.6f}), q, one);
  ASSERT_TRUE(g.grad_step);
  EXPECT_NEAR((*g.grad_step)[0] / step_grad_scale(1, 2), 0.4, 1e-6);
}

TEST(Ste, NoStepGradientWhenFrozen) {
  auto q = scalar_spec(4, 1.0f, 0);
  q.step_learnable = false;
  const std::vector<float> one{1.0f};
  EXPECT_FALSE(ste_backward(Tensor({1}, {0.3f}), q, one).grad_step);
}

TEST(Ste, GradScale) {
  EXPECT_DOUBLE_EQ(step_grad_scale(1, 2), 1.0 / std::sqrt(3.0));
  EXPECT_DOUBLE_EQ(step_grad_scale(27, 8), 1.0 / std::sqrt(27.0 * 255.0));
}

TEST(Ste, StepGradientHandCases) {
  const auto r = checks::check_step_grad_hand_cases();
  EXPECT_TRUE(r.ok()) << r.describe();
}

TEST(Ste, RegionMaskMatchesIndicator) {
  const auto r = checks::check_ste_mask(1000);
  EXPECT_TRUE(r.ok()) << r.describe();
}

TEST(QuantizerProperties, Idempotence) {
  const auto r = checks::check_idempotence(1000);
  EXPECT_TRUE(r.ok()) << r.describe();
}

TEST(QuantizerProperties, GridMembership) {
  const auto r = checks::check_grid_membership(1000);
  EXPECT_TRUE(r.ok()) << r.describe();
}

TEST(QuantizerProperties, ErrorWithinHalfStep) {
  const auto r = checks::check_error_bound(1000);
  EXPECT_TRUE(r.ok()) << r.describe();
}

TEST(QuantizerProperties, Monotone) {
  const auto r = checks::check_monotonicity(1000);
  EXPECT_TRUE(r.ok()) << r.describe();
}

TEST(QuantizerProperties, PerChannelEqualsSliceWise) {
  const auto r = checks::check_channel_equivalence(1000);
  EXPECT_TRUE(r.ok()) << r.describe();
}

TEST(GroupIndexer, RunsCoverEveryElementOnce) {
  QuantSpec q;
  q.bits = 4;
  q.axis = 1;
  q.step = {1, 1, 1};
  q.zero_point = {0, 0, 0};
  const Shape shape{2, 3, 2, 2};
  const GroupIndexer idx(shape, q);
  std::vector<int> hits(numel(shape), 0);
  idx.for_each_run([&](std::size_t g, std::size_t begin, std::size_t len) {
    for (std::size_t i = begin; i < begin + len; ++i) {
      ++hits[i];
      EXPECT_EQ(g, checks::channel_of(shape, 1, i));
      EXPECT_EQ(idx(i), g);
    }
  });
  for (int h : hits) EXPECT_EQ(h, 1);
  EXPECT_EQ(idx.group_size(), 8u);
}

}  // namespace
}  // namespace crqat
