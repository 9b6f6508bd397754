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

#ifndef CRQAT_CONFIG_HPP_
#define CRQAT_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "crqat/trainer.hpp"

namespace crqat {

/// cr: consistency-regularized QAT. baseline: the same run with str = 0.
/// fp: full precision, str = 0.
enum class Mode { kCr, kBaseline, kFp };

std::string to_string(Mode mode);
Mode parse_mode(std::string_view name);

/// Everything one experiment needs. Seeds drive the model init, the labeled
/// split, calibration sampling, batch order and augmentation; `data_seed`
/// only drives synthetic data generation.
struct RunConfig {
  TrainConfig train;

  std::string arch = "tinycnn";
  int wbits = 2;
  int abits = 4;
  std::size_t num_classes = 10;
  std::size_t resnet_width_divisor = 4;

  std::string dataset = "synthetic";  ///< "synthetic" or "cifar10"
  std::string data_dir;               ///< CIFAR-10 binary directory
  std::size_t train_size = 5000;
  std::size_t test_size = 2000;
  std::uint64_t data_seed = 0;
  double labeled_fraction = 1.0;
  std::size_t calibration_size = 100;
  std::size_t eval_samples = 2000;

  std::vector<std::uint64_t> seeds{0};
  std::vector<Mode> modes{Mode::kCr, Mode::kBaseline};
  std::size_t trace_every = 1;  ///< oscillation sampling cadence, iterations

  std::string out_dir = "runs/default";
  bool save_checkpoints = true;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

/// Flat `key = value` text, `#` starts a comment. Unknown keys, repeated
/// keys and malformed values raise ConfigError with the line number.
RunConfig parse_config(std::string_view text, const std::string& origin = "<config>");
RunConfig load_config(const std::filesystem::path& file);

/// Sets one key from its text form, as a config line would.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);

/// Every key, in a fixed order, one `key = value` per line. Parsing the
/// result yields the same config.
std::string to_text(const RunConfig& config);

/// CRC-32 of to_text(), as 8 hex digits.
std::string config_hash(const RunConfig& config);

/// Names of all accepted keys.
std::vector<std::string> config_keys();

/// "hflip:0.5,translate:4,jitter:0.4", "standard" or "none".
AugmentationPolicy parse_augmentation(std::string_view text);
std::string to_string(const AugmentationPolicy& policy);

}  // namespace crqat

#endif  // CRQAT_CONFIG_HPP_
