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

#ifndef CRQAT_METRICS_HPP_
#define CRQAT_METRICS_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crqat/dataset.hpp"
#include "crqat/model.hpp"

namespace crqat {

inline constexpr std::size_t kEntropyBins = 70;

/// Integer quantization level of one latent weight over iterations.
struct WeightTrace {
  std::string site;
  std::size_t channel = 0;
  std::size_t index = 0;  ///< flat offset within the channel
  std::vector<std::int32_t> levels;
};

/// Number of direction reversals: positions i >= 2 where the step
/// levels[i] - levels[i-1] is non-zero and has the opposite sign of the
/// non-zero step levels[i-1] - levels[i-2]. Needs at least two entries.
std::size_t oscillation_count(std::span<const std::int32_t> levels);
inline std::size_t oscillation_count(const WeightTrace& trace) { return oscillation_count(trace.levels); }

/// Records the levels of one output channel of one weight site, every call.
class OscillationTracker {
 public:
  /// Defaults to channel 0 of the first conv (or first weighted) layer.
  explicit OscillationTracker(const ModelState& model);
  OscillationTracker(const ModelState& model, std::size_t weight_site, std::size_t channel);

  void record(const ModelState& model);
  const std::vector<WeightTrace>& traces() const { return traces_; }
  std::size_t total_oscillations() const;

 private:
  std::size_t site_;
  std::size_t channel_;
  std::vector<WeightTrace> traces_;
};

struct KernelEntropy {
  std::string layer;
  std::size_t channel = 0;
  double entropy = 0.0;  ///< bits
  bool degenerate = false;
};

struct EntropyReport {
  std::vector<KernelEntropy> kernels;
  std::size_t bins = kEntropyBins;
  double total = 0.0;
};

/// Shannon entropy (bits) of an equal-width histogram spanning [min, max]
/// of `values`. A zero-width range yields 0 and sets `degenerate`.
double histogram_entropy(std::span<const float> values, std::size_t bins, bool* degenerate = nullptr);

/// Per-kernel (per output channel) entropy of every conv layer's latent weights.
EntropyReport weight_entropy(const ModelState& model, std::size_t bins = kEntropyBins);

/// Top-1 accuracy in percent on `n_samples` rows drawn without replacement.
double evaluate_accuracy(const ModelState& model, const Dataset& dataset, std::size_t n_samples, std::uint64_t seed,
                         std::size_t batch = 250);

/// Argmax of each logits row; ties resolve to the lowest index.
std::vector<int> predict(const ModelState& model, const Tensor& normalized_images);

}  // namespace crqat

#endif  // CRQAT_METRICS_HPP_
