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

#ifndef CRQAT_TRAINER_HPP_
#define CRQAT_TRAINER_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "crqat/augmentation.hpp"
#include "crqat/dataset.hpp"
#include "crqat/model.hpp"
#include "crqat/rng.hpp"
#include "crqat/tensor.hpp"

namespace crqat {

enum class Divergence { kMse, kKl };

struct TrainConfig {
  double ema_alpha = 0.999;
  double cr_strength = 1.0;  ///< "str"; 0 gives plain QAT
  int warmup_epochs = 4;
  int epochs = 30;
  std::size_t batch_size = 256;
  std::size_t labeled_part = 1;
  std::size_t unlabeled_part = 7;
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  Divergence divergence = Divergence::kMse;
  std::uint64_t seed = 0;
  AugmentationPolicy augmentation = AugmentationPolicy::standard();

  /// Throws ConfigError on the first invalid field.
  void validate() const;
  std::size_t labeled_per_batch() const { return batch_size * labeled_part / (labeled_part + unlabeled_part); }
  std::size_t unlabeled_per_batch() const { return batch_size - labeled_per_batch(); }
};

struct StepRecord {
  std::size_t iteration = 0;
  int epoch = 0;
  double lambda = 0.0;
  double ce = 0.0;
  double cr = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

/// lambda = str * exp(-5 (1 - (beta / E)^2)), beta = clip(epoch, 0, E).
double lambda_schedule(int epoch, const TrainConfig& cfg);

/// Cosine annealing over epochs: base_lr * 0.5 * (1 + cos(pi * epoch / epochs)).
double cosine_lr(int epoch, const TrainConfig& cfg);

/// J(student_u, teacher_u) + J(student_l, teacher_l). The unlabeled pair may
/// be undefined when the batch has no unlabeled part. Teacher logits must not
/// carry gradient history.
Tensor cr_loss(const Tensor& student_labeled, const Tensor& teacher_labeled, const Tensor& student_unlabeled,
               const Tensor& teacher_unlabeled, Divergence divergence);

/// ce + lambda * cr.
Tensor total_loss(const Tensor& ce, const Tensor& cr, double lambda);

/// teacher = alpha * teacher + (1 - alpha) * student for every latent weight,
/// bias and step size. Zero points and bit-widths are untouched.
void ema_update(ModelState& teacher, const ModelState& student, double alpha);

/// Sample indices for one mixed batch. Unlabeled entries index the
/// UnlabeledPool and carry no labels.
struct MixedBatch {
  std::vector<std::size_t> labeled;
  std::vector<int> labels;
  std::vector<std::size_t> unlabeled;
};

/// Draws mixed batches with exact labeled:unlabeled counts.
///
/// An epoch is one pass over the unlabeled pool (or over the labeled set when
/// the batch has no unlabeled part), drawn without replacement with the
/// remainder dropped. The labeled stream cycles through fresh permutations
/// independently of epoch boundaries.
class BatchMixer {
 public:
  BatchMixer(std::size_t labeled_size, std::size_t pool_size, const TrainConfig& cfg);

  std::size_t iterations_per_epoch() const { return iterations_; }
  std::size_t labeled_per_batch() const { return n_labeled_; }
  std::size_t unlabeled_per_batch() const { return n_unlabeled_; }

  void start_epoch();
  MixedBatch next(const Dataset& labeled);

 private:
  std::size_t next_labeled();

  std::size_t labeled_size_, pool_size_, n_labeled_, n_unlabeled_, iterations_;
  Rng rng_;
  std::vector<std::size_t> labeled_order_, pool_order_;
  std::size_t labeled_cursor_ = 0, pool_cursor_ = 0;
};

/// SGD with momentum. Weight decay applies to parameters flagged `decay`,
/// never to step sizes; step sizes are floored at kDegenerateStep.
class Sgd {
 public:
  Sgd(const ModelState& model, double momentum, double weight_decay);
  void step(ModelState& model, double lr);

 private:
  double momentum_, weight_decay_;
  std::vector<std::vector<float>> param_buf_, step_buf_;
};

struct TrainData {
  const Dataset& labeled;
  UnlabeledPool unlabeled;
};

struct TrainHooks {
  /// Called with "optimizer_step" and "ema_update" as they happen.
  std::function<void(std::string_view)> on_event;
  std::function<void(const StepRecord&, const ModelState& student, const ModelState& teacher)> after_iteration;
};

struct TrainResult {
  ModelState student;
  ModelState teacher;
  std::vector<StepRecord> records;
  bool diverged = false;
  std::string diagnostic;
};

/// Joint student / EMA-teacher training with consistency regularization.
/// The student must be calibrated; the teacher starts as its copy. The
/// caller's model is left untouched.
TrainResult train(const ModelState& student, const TrainConfig& cfg, const TrainData& data, const TrainHooks& hooks = {});

}  // namespace crqat

#endif  // CRQAT_TRAINER_HPP_
