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

#ifndef CRQAT_EXPERIMENT_HPP_
#define CRQAT_EXPERIMENT_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crqat/config.hpp"
#include "crqat/dataset.hpp"
#include "crqat/model.hpp"

namespace crqat {

/// One (seed, mode) training run.
struct RunResult {
  std::uint64_t seed = 0;
  Mode mode = Mode::kCr;
  double student_accuracy = 0.0;
  double teacher_accuracy = 0.0;
  std::size_t student_oscillations = 0;
  std::size_t teacher_oscillations = 0;
  double student_entropy = 0.0;
  double teacher_entropy = 0.0;
  std::size_t iterations = 0;
  bool diverged = false;
  std::string diagnostic;
};

/// Mean and sample standard deviation (n - 1); std is 0 for one value.
struct Stat {
  double mean = 0.0;
  double std = 0.0;
};
Stat mean_std(std::span<const double> values);

struct ModeSummary {
  Mode mode = Mode::kCr;
  std::size_t runs = 0;
  std::size_t diverged = 0;
  Stat student_accuracy, teacher_accuracy;
  Stat student_oscillations, teacher_oscillations;
  Stat student_entropy, teacher_entropy;
};

/// CR teacher against the baseline student of the same seed.
struct SeedComparison {
  std::uint64_t seed = 0;
  double accuracy_gain = 0.0;  ///< percentage points
  std::size_t cr_teacher_oscillations = 0;
  std::size_t baseline_student_oscillations = 0;
  double cr_teacher_entropy = 0.0;
  double baseline_student_entropy = 0.0;
};

struct Comparison {
  std::vector<SeedComparison> seeds;
  double mean_accuracy_gain = 0.0;
  std::size_t accuracy_positive = 0;     ///< seeds with gain > 0
  std::size_t oscillation_lower = 0;     ///< seeds with strictly fewer teacher reversals
  std::size_t entropy_not_lower = 0;     ///< seeds with teacher entropy >= baseline
};

struct ExperimentReport {
  std::string config_hash;
  std::vector<RunResult> runs;
  std::vector<ModeSummary> modes;
  std::optional<Comparison> comparison;  ///< present when cr and baseline share seeds
};

/// Synthetic pair from data_seed, or CIFAR-10 from data_dir, cut to the
/// configured sizes.
DatasetPair load_experiment_data(const RunConfig& config);

/// Per-seed split, calibration sample and calibrated initial student. Every
/// mode of one seed starts from this state.
struct SeedSetup {
  LabeledSplit split;
  ModelState initial;
};
SeedSetup prepare_seed(const RunConfig& config, const DatasetPair& data, std::uint64_t seed);

/// Output locations below `dir`.
struct RunPaths {
  std::filesystem::path steps, traces, entropy, checkpoint;
};
RunPaths run_paths(const std::filesystem::path& dir, std::uint64_t seed, Mode mode);

/// Trains one mode from `setup` and writes its step, trace and entropy CSVs
/// (and checkpoints when enabled) below config.out_dir.
RunResult run_single(const RunConfig& config, const DatasetPair& data, const SeedSetup& setup, std::uint64_t seed,
                     Mode mode, std::ostream* log = nullptr);

/// All seeds x modes. Writes config.txt, results.csv and summary.json into
/// config.out_dir.
ExperimentReport run_experiment(const RunConfig& config, std::ostream* log = nullptr);

/// Mode statistics and the paired comparison for a set of runs.
ExperimentReport summarize(const std::string& config_hash, std::vector<RunResult> runs);

nlohmann::ordered_json summary_json(const RunConfig& config, const ExperimentReport& report);

void write_results_csv(const std::filesystem::path& file, std::span<const RunResult> runs);
std::vector<RunResult> read_results_csv(const std::filesystem::path& file);

/// Reversal counts per row of a trace CSV written by run_single.
struct TraceCount {
  std::string role, site;
  std::size_t channel = 0, index = 0, oscillations = 0;
};
std::vector<TraceCount> count_trace_oscillations(const std::filesystem::path& file);

}  // namespace crqat

#endif  // CRQAT_EXPERIMENT_HPP_
