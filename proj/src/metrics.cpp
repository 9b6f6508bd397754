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

#include "crqat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crqat/errors.hpp"
#include "crqat/rng.hpp"

namespace crqat {

std::size_t oscillation_count(std::span<const std::int32_t> levels) {
  if (levels.size() < 2) throw UsageError("oscillation_count: trace needs at least two entries");
  std::size_t count = 0;
  for (std::size_t i = 2; i < levels.size(); ++i) {
    const auto now = levels[i] - levels[i - 1];
    const auto before = levels[i - 1] - levels[i - 2];
    if (now != 0 && before != 0 && ((now > 0) != (before > 0))) ++count;
  }
  return count;
}

namespace {

std::size_t default_site(const ModelState& model) {
  for (const auto li : model.weighted_layers())
    if (model.layers[li].kind == LayerKind::kConv) return static_cast<std::size_t>(model.layers[li].weight_site);
  const auto weighted = model.weighted_layers();
  if (weighted.empty()) throw UsageError("oscillation tracking: model has no weighted layer");
  return static_cast<std::size_t>(model.layers[weighted.front()].weight_site);
}

}  // namespace

OscillationTracker::OscillationTracker(const ModelState& model) : OscillationTracker(model, default_site(model), 0) {}

OscillationTracker::OscillationTracker(const ModelState& model, std::size_t weight_site, std::size_t channel)
    : site_(weight_site), channel_(channel) {
  if (site_ >= model.sites.size() || model.sites[site_].kind != SiteKind::kWeight)
    throw UsageError("oscillation tracking: site " + std::to_string(site_) + " is not a weight site");
  const auto& w = model.params[static_cast<std::size_t>(model.sites[site_].param)].value;
  if (channel_ >= w.dim(0)) throw UsageError("oscillation tracking: channel out of range");
  const std::size_t per_channel = w.numel() / w.dim(0);
  for (std::size_t k = 0; k < per_channel; ++k) traces_.push_back({model.sites[site_].name, channel_, k, {}});
}

void OscillationTracker::record(const ModelState& model) {
  const auto& site = model.sites[site_];
  if (!site.calibrated) throw StateError("oscillation tracking: site " + site.name + " is not calibrated");
  const auto& w = model.params[static_cast<std::size_t>(site.param)].value;
  const std::size_t per_channel = w.numel() / w.dim(0);
  const double step = site.step[channel_];
  const std::int64_t zero = site.spec.zero_point[channel_];
  for (std::size_t k = 0; k < per_channel; ++k)
    traces_[k].levels.push_back(static_cast<std::int32_t>(
        quantize_level(w[channel_ * per_channel + k], step, zero, site.spec.max_level())));
}

std::size_t OscillationTracker::total_oscillations() const {
  std::size_t total = 0;
  for (const auto& t : traces_)
    if (t.levels.size() >= 2) total += oscillation_count(t);
  return total;
}

double histogram_entropy(std::span<const float> values, std::size_t bins, bool* degenerate) {
  if (values.empty() || bins == 0) throw UsageError("histogram_entropy: empty input");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (degenerate) *degenerate = !(hi > lo);
  if (!(hi > lo)) return 0.0;
  std::vector<std::size_t> counts(bins, 0);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (float v : values) {
    auto b = static_cast<std::size_t>((static_cast<double>(v) - lo) / width);
    ++counts[std::min(b, bins - 1)];
  }
  const double n = static_cast<double>(values.size());
  double h = 0.0;
  for (auto c : counts)
    if (c > 0) {
      const double p = static_cast<double>(c) / n;
      h -= p * std::log2(p);
    }
  return h;
}

EntropyReport weight_entropy(const ModelState& model, std::size_t bins) {
  EntropyReport report;
  report.bins = bins;
  for (const auto li : model.weighted_layers()) {
    const auto& layer = model.layers[li];
    if (layer.kind != LayerKind::kConv) continue;
    const auto& w = model.params[static_cast<std::size_t>(layer.weight_param)].value;
    const std::size_t per_kernel = w.numel() / w.dim(0);
    for (std::size_t k = 0; k < w.dim(0); ++k) {
      KernelEntropy e;
      e.layer = layer.name;
      e.channel = k;
      e.entropy = histogram_entropy(w.data().subspan(k * per_kernel, per_kernel), bins, &e.degenerate);
      report.total += e.entropy;
      report.kernels.push_back(std::move(e));
    }
  }
  if (report.kernels.empty()) throw UsageError("weight_entropy: model has no conv layer");
  return report;
}

std::vector<int> predict(const ModelState& model, const Tensor& normalized_images) {
  NoGradGuard guard;
  const Tensor logits = forward_quantized(model, normalized_images);
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.data().subspan(i * c, c);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

double evaluate_accuracy(const ModelState& model, const Dataset& dataset, std::size_t n_samples, std::uint64_t seed,
                         std::size_t batch) {
  if (dataset.size() == 0) throw UsageError("evaluate_accuracy: empty dataset");
  if (n_samples == 0 || n_samples > dataset.size())
    throw UsageError("evaluate_accuracy: cannot draw " + std::to_string(n_samples) + " samples from " +
                     std::to_string(dataset.size()));
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(hash_key({seed, 0xE7A1ull}));
  rng.shuffle(std::span<std::size_t>(order));
  order.resize(n_samples);
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < n_samples; begin += batch) {
    const std::span<const std::size_t> idx(order.data() + begin, std::min(batch, n_samples - begin));
    const auto pred = predict(model, dataset.normalized_batch(idx));
    for (std::size_t k = 0; k < idx.size(); ++k)
      if (pred[k] == dataset.labels[idx[k]]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(n_samples);
}

}  // namespace crqat
