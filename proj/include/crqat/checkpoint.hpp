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

#ifndef CRQAT_CHECKPOINT_HPP_
#define CRQAT_CHECKPOINT_HPP_

#include <filesystem>
#include <optional>
#include <string>

#include "crqat/model.hpp"

namespace crqat {

inline constexpr const char* kManifestFile = "manifest.txt";
inline constexpr const char* kBlobFile = "tensors.bin";

struct CheckpointInfo {
  int epoch = 0;
  std::string config_hash;
};

struct LoadedCheckpoint {
  ModelState model;
  CheckpointInfo info;
};

/// Writes `dir`/manifest.txt and `dir`/tensors.bin (little-endian f32:
/// parameters in order, then site step sizes). The manifest carries the
/// architecture, role, tensor index, quantizer specs and the blob CRC-32.
void save_checkpoint(const ModelState& model, const std::filesystem::path& dir, const CheckpointInfo& info);

/// Rebuilds the topology from the manifest and restores every value.
/// IoError on missing, malformed or truncated files and shape mismatches;
/// ChecksumError when the blob CRC or `expected_config_hash` disagrees.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir,
                                 const std::optional<std::string>& expected_config_hash = std::nullopt);

}  // namespace crqat

#endif  // CRQAT_CHECKPOINT_HPP_
