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
#include <numeric>
#include <string>
#include <vector>

#include "checks.hpp"
#include "crqat/metrics.hpp"
#include "crqat/ops.hpp"
#include "crqat/trainer.hpp"

namespace crqat {
namespace {

struct Fixture {
  Dataset data;
  ModelState student;
};

Fixture small_setup(std::uint64_t seed, std::size_t n = 64) {
  Fixture f{make_synthetic(n, 4, seed), build_model("tinycnn", 4, 2, 4, seed)};
  std::vector<std::size_t> idx(32);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  calibrate_model(f.student, f.data.normalized_batch(idx));
  return f;
}

TrainConfig small_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.labeled_part = 1;
  cfg.unlabeled_part = 3;
  cfg.epochs = 2;
  cfg.warmup_epochs = 1;
  cfg.seed = seed;
  cfg.augmentation = AugmentationPolicy::standard(seed);
  return cfg;
}

void expect_params_equal(const ModelState& a, const ModelState& b) {
  for (std::size_t i = 0; i < a.params.size(); ++i) EXPECT_EQ(a.params[i].value.values(), b.params[i].value.values());
  for (std::size_t i = 0; i < a.sites.size(); ++i) EXPECT_EQ(a.sites[i].step.values(), b.sites[i].step.values());
}

TEST(LambdaSchedule, Examples) {
  TrainConfig cfg;
  cfg.cr_strength = 4.0;
  cfg.warmup_epochs = 10;
  // 4 exp(-3.75) = 0.0940709834...
  EXPECT_NEAR(lambda_schedule(5, cfg), 0.09407098342403643, 1e-15);
  EXPECT_NEAR(lambda_schedule(0, cfg), 4.0 * std::exp(-5.0), 1e-15);
  EXPECT_EQ(lambda_schedule(10, cfg), 4.0);
  EXPECT_EQ(lambda_schedule(25, cfg), 4.0);
  cfg.warmup_epochs = 0;
  EXPECT_THROW(lambda_schedule(1, cfg), ConfigError);
}

TEST(LambdaSchedule, ClosedFormCapAndMonotone) {
  for (const auto& r : checks::schedule_checks()) EXPECT_TRUE(r.ok()) << r.describe();
}

TEST(CosineLr, Endpoints) {
  TrainConfig cfg;
  cfg.base_lr = 0.1;
  cfg.epochs = 10;
  EXPECT_DOUBLE_EQ(cosine_lr(0, cfg), 0.1);
  EXPECT_NEAR(cosine_lr(5, cfg), 0.05, 1e-15);
  EXPECT_NEAR(cosine_lr(10, cfg), 0.0, 1e-15);
}

TEST(CrLoss, Examples) {
  const Tensor s({1, 2}, {1.0f, 0.0f}), t({1, 2}, {0.0f, 1.0f});
  EXPECT_EQ(cr_loss(s, t, {}, {}, Divergence::kMse).item(), 1.0f);
  EXPECT_EQ(cr_loss(s, s.clone(), s, s.clone(), Divergence::kMse).item(), 0.0f);
  EXPECT_NEAR(cr_loss(s, s.clone(), s, s.clone(), Divergence::kKl).item(), 0.0f, 1e-7);
  // The unlabeled and labeled terms add.
  EXPECT_EQ(cr_loss(s, t, s, t, Divergence::kMse).item(), 2.0f);
}

TEST(CrLoss, KlIsNonNegative) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    std::vector<float> a(12), b(12);
    for (auto& v : a) v = static_cast<float>(rng.uniform(-4.0, 4.0));
    for (auto& v : b) v = static_cast<float>(rng.uniform(-4.0, 4.0));
    EXPECT_GE(cr_loss(Tensor({3, 4}, a), Tensor({3, 4}, b), {}, {}, Divergence::kKl).item(), 0.0f);
  }
}

TEST(CrLoss, Errors) {
  const Tensor s({2, 3}, std::vector<float>(6, 0.5f), true);
  const Tensor graph = scale(Tensor({2, 3}, std::vector<float>(6, 0.5f), true), 2.0f);
  EXPECT_THROW(cr_loss(s, graph, {}, {}, Divergence::kMse), UsageError);
  EXPECT_THROW(cr_loss(s, Tensor({3, 2}, std::vector<float>(6, 0.0f)), {}, {}, Divergence::kMse), DimensionError);
  EXPECT_THROW(cr_loss(s, s.clone(), s, {}, Divergence::kMse), UsageError);
}

TEST(CrLoss, GradientReachesStudentOnly) {
  const Tensor s({1, 2}, {1.0f, 0.0f}, true);
  const Tensor t({1, 2}, {0.0f, 1.0f});
  backward(cr_loss(s, t, {}, {}, Divergence::kMse));
  EXPECT_TRUE(s.has_grad());
  EXPECT_FALSE(t.has_grad());
  EXPECT_THROW(cr_loss(s, Tensor({1, 2}, {0.0f, 1.0f}, true), {}, {}, Divergence::kMse), UsageError);
  EXPECT_EQ(std::vector<float>(s.grad().begin(), s.grad().end()), (std::vector<float>{1.0f, -1.0f}));
}

TEST(TotalLoss, Examples) {
  EXPECT_EQ(total_loss(Tensor::scalar(2.0f), Tensor::scalar(0.5f), 4.0).item(), 4.0f);
  EXPECT_EQ(total_loss(Tensor::scalar(2.0f), Tensor::scalar(7.0f), 0.0).item(), 2.0f);
  EXPECT_EQ(total_loss(Tensor::scalar(2.0f), Tensor::scalar(0.0f), 3.0).item(), 2.0f);
  EXPECT_THROW(total_loss(Tensor::scalar(2.0f), Tensor::scalar(0.0f), -1.0), InputError);
}

TEST(EmaUpdate, Examples) {
  auto f = small_setup(1);
  ModelState teacher = copy_into_teacher(f.student);
  ModelState fixed = teacher.clone();
  ema_update(teacher, f.student, 0.999);
  expect_params_equal(teacher, fixed);

  for (auto& v : teacher.params[0].value.data()) v = 1.0f;
  teacher.ema_params.clear();
  teacher.ema_steps.clear();
  for (auto& v : f.student.params[0].value.data()) v = 0.0f;
  ema_update(teacher, f.student, 0.999);
  for (float v : teacher.params[0].value.values()) EXPECT_EQ(v, 0.999f);
}

TEST(EmaUpdate, GeometricClosedForm) {
  for (double alpha : {0.999, 0.9, 0.5}) {
    const auto r = checks::check_ema_geometric(alpha, 11);
    EXPECT_TRUE(r.ok()) << alpha << ": " << r.describe();
  }
}

TEST(EmaUpdate, ZeroPointsUntouchedAndMismatchRejected) {
  auto f = small_setup(2);
  ModelState teacher = copy_into_teacher(f.student);
  for (auto& p : f.student.params)
    for (auto& v : p.value.data()) v += 0.25f;
  ema_update(teacher, f.student, 0.5);
  for (std::size_t i = 0; i < teacher.sites.size(); ++i) {
    EXPECT_EQ(teacher.sites[i].spec.zero_point, f.student.sites[i].spec.zero_point);
    EXPECT_EQ(teacher.sites[i].bits, f.student.sites[i].bits);
  }
  ModelState other = build_model("mlp", 4, 2, 4);
  EXPECT_THROW(ema_update(teacher, other, 0.5), StateError);
}

TEST(BatchMixer, RatioCounts) {
  TrainConfig cfg;
  EXPECT_EQ(cfg.labeled_per_batch(), 32u);
  EXPECT_EQ(cfg.unlabeled_per_batch(), 224u);
  const Dataset d = make_synthetic(300, 3, 0);
  BatchMixer mixer(d.size(), d.size(), cfg);
  mixer.start_epoch();
  const auto b = mixer.next(d);
  EXPECT_EQ(b.labeled.size(), 32u);
  EXPECT_EQ(b.labels.size(), 32u);
  EXPECT_EQ(b.unlabeled.size(), 224u);
  for (std::size_t k = 0; k < 32; ++k) EXPECT_EQ(b.labels[k], d.labels[b.labeled[k]]);

  cfg.batch_size = 250;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(BatchMixer(300, 300, cfg), ConfigError);
}

TEST(BatchMixer, FullyLabeledRatio) {
  TrainConfig cfg;
  cfg.batch_size = 20;
  cfg.unlabeled_part = 0;
  const Dataset d = make_synthetic(100, 3, 0);
  BatchMixer mixer(d.size(), 0, cfg);
  EXPECT_EQ(mixer.iterations_per_epoch(), 5u);
  mixer.start_epoch();
  std::vector<int> seen(100, 0);
  for (std::size_t it = 0; it < 5; ++it) {
    const auto b = mixer.next(d);
    EXPECT_TRUE(b.unlabeled.empty());
    for (auto i : b.labeled) ++seen[i];
  }
  for (int c : seen) EXPECT_EQ(c, 1);
}

TEST(BatchMixer, CountingOracle) {
  TrainConfig cfg;
  cfg.batch_size = 32;
  const std::size_t labeled = 150, pool = 1000;
  const Dataset d = make_synthetic(labeled, 3, 0);
  BatchMixer mixer(labeled, pool, cfg);
  EXPECT_EQ(mixer.iterations_per_epoch(), pool / 28);
  for (int epoch = 0; epoch < 3; ++epoch) {
    mixer.start_epoch();
    std::vector<int> labeled_hits(labeled, 0), pool_hits(pool, 0);
    for (std::size_t it = 0; it < mixer.iterations_per_epoch(); ++it) {
      const auto b = mixer.next(d);
      for (auto i : b.labeled) ++labeled_hits[i];
      for (auto j : b.unlabeled) ++pool_hits[j];
    }
    // 35 iterations draw 140 labeled rows from fresh permutations of 150;
    // with the cycle spilling across epochs no row exceeds ceil(140/150) + 1.
    for (int c : pool_hits) EXPECT_LE(c, 1);
    for (int c : labeled_hits) EXPECT_LE(c, 2);
    EXPECT_EQ(std::accumulate(pool_hits.begin(), pool_hits.end(), 0), 35 * 28);
  }
  EXPECT_THROW(mixer.next(d), StateError);
}

TEST(Train, RejectsUncalibratedStudent) {
  const Dataset d = make_synthetic(64, 4, 0);
  const TrainData data{d, UnlabeledPool::from_dataset(d)};
  EXPECT_THROW(train(build_model("tinycnn", 4, 2, 4), small_config(0), data), StateError);
}

TEST(Train, ZeroLearningRateOnlyMovesTeacher) {
  auto f = small_setup(3);
  const TrainData data{f.data, UnlabeledPool::from_dataset(f.data)};
  TrainConfig cfg = small_config(3);
  cfg.base_lr = 0.0;
  cfg.epochs = 1;
  const ModelState initial = f.student.clone();
  bool first = true;
  const auto res = train(f.student, cfg, data,
                         {{}, [&](const StepRecord&, const ModelState& s, const ModelState& t) {
                            if (!first) return;
                            first = false;
                            expect_params_equal(s, initial);
                            // teacher = a t + (1 - a) s with t == s.
                            expect_params_equal(t, initial);
                          }});
  expect_params_equal(res.student, initial);
  expect_params_equal(res.teacher, initial);
}

TEST(Train, StopGradientEventOrderAndHull) {
  auto f = small_setup(4);
  const TrainData data{f.data, UnlabeledPool::from_dataset(f.data)};
  const TrainConfig cfg = small_config(4);
  checks::TeacherWatch watch(f.student);
  std::vector<std::string> events;
  std::size_t iterations = 0;
  const auto res = train(f.student, cfg, data,
                         {[&](std::string_view e) { events.emplace_back(e); },
                          [&](const StepRecord& rec, const ModelState& s, const ModelState& t) {
                            ++iterations;
                            watch(s, t);
                            EXPECT_NEAR(rec.total, rec.ce + rec.lambda * rec.cr, 1e-6 * std::max(1.0, rec.total));
                          }});
  EXPECT_FALSE(res.diverged);
  ASSERT_EQ(events.size(), 2 * iterations);
  for (std::size_t i = 0; i < events.size(); i += 2) {
    EXPECT_EQ(events[i], "optimizer_step");
    EXPECT_EQ(events[i + 1], "ema_update");
  }
  EXPECT_TRUE(watch.grads.ok()) << watch.grads.describe();
  EXPECT_TRUE(watch.hull.ok()) << watch.hull.describe();
  EXPECT_EQ(res.records.size(), iterations);
}

TEST(Train, RecordsFollowSchedules) {
  auto f = small_setup(5);
  const TrainData data{f.data, UnlabeledPool::from_dataset(f.data)};
  TrainConfig cfg = small_config(5);
  cfg.epochs = 3;
  cfg.warmup_epochs = 2;
  const auto res = train(f.student, cfg, data);
  ASSERT_EQ(res.records.size(), 3u * (64 / 12));
  for (std::size_t i = 0; i < res.records.size(); ++i) {
    const auto& r = res.records[i];
    EXPECT_EQ(r.iteration, i);
    EXPECT_EQ(r.epoch, static_cast<int>(i / 5));
    EXPECT_EQ(r.lambda, lambda_schedule(r.epoch, cfg));
    EXPECT_EQ(r.lr, cosine_lr(r.epoch, cfg));
    EXPECT_TRUE(std::isfinite(r.ce) && std::isfinite(r.cr));
  }
}

TEST(Train, FiftyIterationsAreBitwiseReproducible) {
  TrainConfig cfg = small_config(6);
  cfg.epochs = 10;
  auto a = small_setup(6), b = small_setup(6);
  const TrainData da{a.data, UnlabeledPool::from_dataset(a.data)}, db{b.data, UnlabeledPool::from_dataset(b.data)};
  const auto ra = train(a.student, cfg, da), rb = train(b.student, cfg, db);
  ASSERT_EQ(ra.records.size(), 50u);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(ra.records[i].total, rb.records[i].total);
    EXPECT_EQ(ra.records[i].cr, rb.records[i].cr);
  }
  expect_params_equal(ra.student, rb.student);
  expect_params_equal(ra.teacher, rb.teacher);
}

TEST(Train, ZeroStrengthIsPlainQat) {
  auto f = small_setup(7);
  TrainConfig cfg = small_config(7);
  cfg.cr_strength = 0.0;
  cfg.unlabeled_part = 0;
  cfg.augmentation = AugmentationPolicy{};
  const TrainData data{f.data, UnlabeledPool::from_dataset(f.data)};
  const auto res = train(f.student, cfg, data);

  // Reference loop: cross entropy only on the same batches.
  ModelState s = f.student.clone();
  BatchMixer mixer(f.data.size(), f.data.size(), cfg);
  Sgd sgd(s, cfg.momentum, cfg.weight_decay);
  std::size_t k = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    mixer.start_epoch();
    for (std::size_t it = 0; it < mixer.iterations_per_epoch(); ++it, ++k) {
      const auto batch = mixer.next(f.data);
      s.zero_grad();
      const Tensor ce = cross_entropy(forward_quantized(s, f.data.normalized_batch(batch.labeled)),
                                      std::span<const int>(batch.labels));
      EXPECT_EQ(ce.item(), static_cast<float>(res.records[k].ce));
      EXPECT_EQ(res.records[k].total, res.records[k].ce);
      backward(ce);
      sgd.step(s, cosine_lr(epoch, cfg));
    }
  }
  expect_params_equal(res.student, s);
}

TEST(Train, DivergenceAbortsWithDiagnostic) {
  auto f = small_setup(8);
  TrainConfig cfg = small_config(8);
  cfg.base_lr = 1e30;
  cfg.epochs = 3;
  const TrainData data{f.data, UnlabeledPool::from_dataset(f.data)};
  const auto res = train(f.student, cfg, data);
  EXPECT_TRUE(res.diverged);
  EXPECT_FALSE(res.diagnostic.empty());
  for (const auto& r : res.records) EXPECT_TRUE(std::isfinite(r.total));
}

}  // namespace
}  // namespace crqat
