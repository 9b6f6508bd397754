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

#include "crqat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "crqat/errors.hpp"
#include "crqat/ops.hpp"

namespace crqat {

void TrainConfig::validate() const {
  if (!(ema_alpha > 0.0 && ema_alpha < 1.0)) throw ConfigError("ema_alpha must lie in (0, 1)");
  if (!(cr_strength >= 0.0)) throw ConfigError("cr_strength must be non-negative");
  if (warmup_epochs < 1) throw ConfigError("warmup_epochs must be at least 1");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (labeled_part < 1) throw ConfigError("mix ratio: labeled part must be a positive integer");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (batch_size % (labeled_part + unlabeled_part) != 0)
    throw ConfigError("batch_size " + std::to_string(batch_size) + " is not divisible by the mix ratio sum " +
                      std::to_string(labeled_part + unlabeled_part));
  if (!(base_lr >= 0.0)) throw ConfigError("base_lr must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
}

double lambda_schedule(int epoch, const TrainConfig& cfg) {
  if (cfg.warmup_epochs <= 0) throw ConfigError("lambda_schedule: warmup_epochs must be positive");
  if (epoch < 0) throw UsageError("lambda_schedule: negative epoch");
  const double warmup = static_cast<double>(cfg.warmup_epochs);
  const double beta = std::clamp(static_cast<double>(epoch), 0.0, warmup);
  const double ratio = beta / warmup;
  return cfg.cr_strength * std::exp(-5.0 * (1.0 - ratio * ratio));
}

double cosine_lr(int epoch, const TrainConfig& cfg) {
  return cfg.base_lr * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(cfg.epochs)));
}

namespace {

Tensor divergence_term(const Tensor& student, const Tensor& teacher, Divergence d) {
  if (teacher.impl()->needs_grad())
    throw UsageError("cr_loss: teacher logits carry gradient history; teacher forwards must be stop-gradient");
  return d == Divergence::kMse ? mse(student, teacher) : kl_divergence(teacher, student);
}

}  // namespace

Tensor cr_loss(const Tensor& student_labeled, const Tensor& teacher_labeled, const Tensor& student_unlabeled,
               const Tensor& teacher_unlabeled, Divergence divergence) {
  if (student_unlabeled.defined() != teacher_unlabeled.defined())
    throw UsageError("cr_loss: unlabeled student and teacher logits must both be present or both absent");
  Tensor labeled = divergence_term(student_labeled, teacher_labeled, divergence);
  if (!student_unlabeled.defined()) return labeled;
  return add(divergence_term(student_unlabeled, teacher_unlabeled, divergence), labeled);
}

Tensor total_loss(const Tensor& ce, const Tensor& cr, double lambda) {
  if (!(lambda >= 0.0)) throw InputError("total_loss: lambda must be non-negative");
  return add(ce, scale(cr, static_cast<float>(lambda)));
}

void ema_update(ModelState& teacher, const ModelState& student, double alpha) {
  if (teacher.params.size() != student.params.size() || teacher.sites.size() != student.sites.size())
    throw StateError("ema_update: teacher and student topologies differ");
  if (teacher.ema_params.size() != teacher.params.size()) {
    teacher.ema_params.clear();
    for (const auto& p : teacher.params) teacher.ema_params.emplace_back(p.value.data().begin(), p.value.data().end());
  }
  if (teacher.ema_steps.size() != teacher.sites.size()) {
    teacher.ema_steps.clear();
    for (const auto& s : teacher.sites)
      teacher.ema_steps.emplace_back(s.step.defined() ? std::vector<double>(s.step.data().begin(), s.step.data().end())
                                                      : std::vector<double>{});
  }
  const double keep = alpha, take = 1.0 - alpha;
  auto blend = [&](std::vector<double>& shadow, Tensor& dst, const Tensor& src, const std::string& name) {
    if (dst.shape() != src.shape()) throw StateError("ema_update: shape mismatch at " + name);
    auto out = dst.data();
    const auto in = src.data();
    for (std::size_t i = 0; i < shadow.size(); ++i) {
      shadow[i] = keep * shadow[i] + take * static_cast<double>(in[i]);
      out[i] = static_cast<float>(shadow[i]);
    }
  };
  for (std::size_t i = 0; i < teacher.params.size(); ++i)
    blend(teacher.ema_params[i], teacher.params[i].value, student.params[i].value, teacher.params[i].name);
  for (std::size_t i = 0; i < teacher.sites.size(); ++i) {
    auto& ts = teacher.sites[i];
    const auto& ss = student.sites[i];
    if (ts.spec.zero_point != ss.spec.zero_point || ts.bits != ss.bits)
      throw StateError("ema_update: quantizer " + ts.name + " differs in zero point or bit-width");
    if (ts.step.defined() && ss.step.defined() && ss.spec.step_learnable)
      blend(teacher.ema_steps[i], ts.step, ss.step, ts.name);
  }
}

BatchMixer::BatchMixer(std::size_t labeled_size, std::size_t pool_size, const TrainConfig& cfg)
    : labeled_size_(labeled_size),
      pool_size_(pool_size),
      n_labeled_(cfg.labeled_per_batch()),
      n_unlabeled_(cfg.unlabeled_per_batch()),
      iterations_(0),
      rng_(hash_key({cfg.seed, 0xBA7Cull})) {
  cfg.validate();
  if (labeled_size_ == 0) throw ConfigError("batch mixing: labeled set is empty");
  if (n_labeled_ == 0) throw ConfigError("batch mixing: batch has no labeled slot");
  if (n_unlabeled_ > 0) {
    if (pool_size_ == 0) throw ConfigError("batch mixing: unlabeled pool is empty");
    iterations_ = pool_size_ / n_unlabeled_;
  } else {
    iterations_ = labeled_size_ / n_labeled_;
  }
  if (iterations_ == 0) throw ConfigError("batch mixing: data smaller than one batch");
  labeled_order_.resize(labeled_size_);
  std::iota(labeled_order_.begin(), labeled_order_.end(), std::size_t{0});
  labeled_cursor_ = labeled_size_;
  pool_order_.resize(pool_size_);
  std::iota(pool_order_.begin(), pool_order_.end(), std::size_t{0});
}

void BatchMixer::start_epoch() {
  rng_.shuffle(std::span<std::size_t>(pool_order_));
  pool_cursor_ = 0;
  if (n_unlabeled_ == 0) labeled_cursor_ = labeled_size_;
}

std::size_t BatchMixer::next_labeled() {
  if (labeled_cursor_ >= labeled_size_) {
    rng_.shuffle(std::span<std::size_t>(labeled_order_));
    labeled_cursor_ = 0;
  }
  return labeled_order_[labeled_cursor_++];
}

MixedBatch BatchMixer::next(const Dataset& labeled) {
  if (labeled.size() != labeled_size_) throw StateError("batch mixing: labeled set size changed");
  MixedBatch b;
  for (std::size_t k = 0; k < n_labeled_; ++k) {
    const auto i = next_labeled();
    b.labeled.push_back(i);
    b.labels.push_back(labeled.labels[i]);
  }
  for (std::size_t k = 0; k < n_unlabeled_; ++k) {
    if (pool_cursor_ >= pool_size_) throw StateError("batch mixing: epoch exhausted; call start_epoch()");
    b.unlabeled.push_back(pool_order_[pool_cursor_++]);
  }
  return b;
}

Sgd::Sgd(const ModelState& model, double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : model.params) param_buf_.emplace_back(p.value.numel(), 0.0f);
  for (const auto& s : model.sites) step_buf_.emplace_back(s.step.defined() ? s.step.numel() : 0, 0.0f);
}

void Sgd::step(ModelState& model, double lr) {
  auto update = [&](Tensor& t, std::vector<float>& buf, double decay) {
    if (!t.has_grad()) return;
    auto w = t.data();
    const auto g = t.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double grad = static_cast<double>(g[i]) + decay * w[i];
      buf[i] = static_cast<float>(momentum_ * buf[i] + grad);
      w[i] = static_cast<float>(w[i] - lr * buf[i]);
    }
  };
  for (std::size_t i = 0; i < model.params.size(); ++i)
    update(model.params[i].value, param_buf_[i], model.params[i].decay ? weight_decay_ : 0.0);
  for (std::size_t i = 0; i < model.sites.size(); ++i) {
    auto& s = model.sites[i];
    if (!s.step.defined()) continue;
    update(s.step, step_buf_[i], 0.0);
    for (auto& v : s.step.data()) v = std::max(v, static_cast<float>(kDegenerateStep));
  }
}

namespace {

constexpr std::uint64_t kUnlabeledKeyOffset = std::uint64_t{1} << 40;

struct Views {
  Tensor first;
  Tensor second;
};

Views assemble_views(const MixedBatch& batch, const TrainData& data, const TrainConfig& cfg, std::uint64_t step) {
  const Dataset& ds = data.labeled;
  const std::size_t sz = ds.image_size(), c = ds.channels();
  const std::size_t n = batch.labeled.size() + batch.unlabeled.size();
  std::vector<float> v1(n * sz), v2(n * sz);
  auto emit = [&](std::size_t slot, std::span<const float> pixels, std::uint64_t key) {
    Tensor img({c, ds.height(), ds.width()}, std::vector<float>(pixels.begin(), pixels.end()));
    auto [a, b] = augment_two_views(img, cfg.augmentation, key, step);
    ds.normalization.apply(a.data(), c, std::span<float>(v1).subspan(slot * sz, sz));
    ds.normalization.apply(b.data(), c, std::span<float>(v2).subspan(slot * sz, sz));
  };
  std::size_t slot = 0;
  for (auto i : batch.labeled) emit(slot++, ds.image_data(i), i);
  for (auto j : batch.unlabeled) emit(slot++, data.unlabeled.image_data(j), kUnlabeledKeyOffset + data.unlabeled.source_index(j));
  const Shape shape{n, c, ds.height(), ds.width()};
  return {Tensor(shape, std::move(v1)), Tensor(shape, std::move(v2))};
}

}  // namespace

TrainResult train(const ModelState& student, const TrainConfig& cfg, const TrainData& data, const TrainHooks& hooks) {
  cfg.validate();
  cfg.augmentation.validate(data.labeled.height(), data.labeled.width());
  if (student.role != Role::kStudent) throw StateError("train: model role must be student");
  if (!student.calibrated()) throw StateError("train: student is not calibrated");

  // Deep copy: a ModelState copy shares tensor storage with its source.
  TrainResult result{student.clone(), {}, {}, false, {}};
  ModelState& s = result.student;
  result.teacher = copy_into_teacher(s);
  ModelState& t = result.teacher;

  BatchMixer mixer(data.labeled.size(), data.unlabeled.size(), cfg);
  Sgd optimizer(s, cfg.momentum, cfg.weight_decay);
  const std::size_t n_lab = mixer.labeled_per_batch(), n_unl = mixer.unlabeled_per_batch();
  std::size_t iteration = 0;

  for (int epoch = 0; epoch < cfg.epochs && !result.diverged; ++epoch) {
    const double lr = cosine_lr(epoch, cfg);
    const double lambda = lambda_schedule(epoch, cfg);
    mixer.start_epoch();
    for (std::size_t it = 0; it < mixer.iterations_per_epoch(); ++it, ++iteration) {
      const MixedBatch batch = mixer.next(data.labeled);
      const Views views = assemble_views(batch, data, cfg, iteration);
      StepRecord rec;
      rec.iteration = iteration;
      rec.epoch = epoch;
      rec.lambda = lambda;
      rec.lr = lr;
      s.zero_grad();
      try {
        const Tensor zs = forward_quantized(s, views.first);
        const Tensor zt = forward_quantized(t, views.second);
        const Tensor zs_l = slice_rows(zs, 0, n_lab), zt_l = slice_rows(zt, 0, n_lab);
        Tensor zs_u, zt_u;
        if (n_unl > 0) {
          zs_u = slice_rows(zs, n_lab, n_lab + n_unl);
          zt_u = slice_rows(zt, n_lab, n_lab + n_unl);
        }
        const Tensor ce = cross_entropy(zs_l, std::span<const int>(batch.labels));
        const Tensor cr = cr_loss(zs_l, zt_l, zs_u, zt_u, cfg.divergence);
        const Tensor total = total_loss(ce, cr, lambda);
        rec.ce = ce.item();
        rec.cr = cr.item();
        rec.total = total.item();
        backward(total);
      } catch (const NumericError& e) {
        result.diverged = true;
        result.diagnostic = "epoch " + std::to_string(epoch) + ", iteration " + std::to_string(iteration) + ": " + e.what();
        break;
      }
      optimizer.step(s, lr);
      if (hooks.on_event) hooks.on_event("optimizer_step");
      ema_update(t, s, cfg.ema_alpha);
      if (hooks.on_event) hooks.on_event("ema_update");
      result.records.push_back(rec);
      if (hooks.after_iteration) hooks.after_iteration(rec, s, t);
    }
  }
  s.zero_grad();
  return result;
}

}  // namespace crqat
