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

#include <filesystem>
#include <fstream>
#include <string>

#include "crqat/checkpoint.hpp"
#include "crqat/rng.hpp"

namespace crqat {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("crqat_checkpoint_test_" + name);
  fs::remove_all(dir);
  return dir;
}

Tensor batch(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(4 * 3 * 32 * 32);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-2.0, 2.0));
  return Tensor({4, 3, 32, 32}, v);
}

ModelState calibrated(const std::string& arch, std::uint64_t seed) {
  ModelState m = build_model(arch, 10, 2, 4, seed);
  calibrate_model(m, batch(seed + 1));
  return m;
}

TEST(Checkpoint, RoundTripIsBitwise) {
  for (const char* arch : {"tinycnn", "mlp", "resnet18_narrow"}) {
    const ModelState m = calibrated(arch, 3);
    const auto dir = scratch(arch);
    save_checkpoint(m, dir, {7, "abcd1234"});
    const auto loaded = load_checkpoint(dir, std::string("abcd1234"));
    EXPECT_EQ(loaded.info.epoch, 7);
    EXPECT_EQ(loaded.model.arch, arch);
    ASSERT_EQ(loaded.model.params.size(), m.params.size());
    for (std::size_t i = 0; i < m.params.size(); ++i)
      EXPECT_EQ(loaded.model.params[i].value.values(), m.params[i].value.values());
    for (std::size_t i = 0; i < m.sites.size(); ++i) EXPECT_EQ(loaded.model.sites[i].current_spec(), m.sites[i].current_spec());
    const Tensor x = batch(11);
    EXPECT_EQ(forward_quantized(loaded.model, x).values(), forward_quantized(m, x).values()) << arch;
  }
}

TEST(Checkpoint, TeacherRoleSurvives) {
  const ModelState t = copy_into_teacher(calibrated("tinycnn", 4));
  const auto dir = scratch("teacher");
  save_checkpoint(t, dir, {});
  const auto loaded = load_checkpoint(dir);
  EXPECT_EQ(loaded.model.role, Role::kTeacher);
  EXPECT_TRUE(loaded.info.config_hash.empty());
  for (const auto& p : loaded.model.params) EXPECT_FALSE(p.value.requires_grad());
}

TEST(Checkpoint, ManifestCountsMatchModel) {
  const ModelState m = calibrated("resnet18_narrow", 5);
  const auto dir = scratch("manifest");
  save_checkpoint(m, dir, {});
  std::ifstream in(dir / kManifestFile);
  std::size_t params = 0, sites = 0;
  for (std::string line; std::getline(in, line);) {
    params += line.rfind("param ", 0) == 0;
    sites += line.rfind("site ", 0) == 0;
  }
  std::size_t weight_sites = 0, act_sites = 0;
  for (const auto& def : m.layers) {
    weight_sites += def.weight_site >= 0;
    act_sites += def.act_site >= 0;
  }
  EXPECT_EQ(sites, weight_sites + act_sites);
  EXPECT_EQ(params, m.params.size());
}

TEST(Checkpoint, CorruptByteFailsChecksum) {
  const auto dir = scratch("corrupt");
  save_checkpoint(calibrated("tinycnn", 6), dir, {});
  {
    std::fstream f(dir / kBlobFile, std::ios::binary | std::ios::in | std::ios::out);
    f.seekg(1000);
    const char c = static_cast<char>(f.get());
    f.seekp(1000);
    f.put(static_cast<char>(c ^ 0x10));
  }
  EXPECT_THROW(load_checkpoint(dir), ChecksumError);
}

TEST(Checkpoint, TruncationAndMissingFilesAreIoErrors) {
  const auto dir = scratch("truncated");
  save_checkpoint(calibrated("tinycnn", 7), dir, {});
  fs::resize_file(dir / kBlobFile, fs::file_size(dir / kBlobFile) - 4);
  EXPECT_THROW(load_checkpoint(dir), IoError);
  fs::remove(dir / kBlobFile);
  EXPECT_THROW(load_checkpoint(dir), IoError);
  EXPECT_THROW(load_checkpoint(scratch("absent")), IoError);
}

TEST(Checkpoint, ConfigHashMismatch) {
  const auto dir = scratch("hash");
  save_checkpoint(calibrated("tinycnn", 8), dir, {1, "00000001"});
  EXPECT_THROW(load_checkpoint(dir, std::string("00000002")), ChecksumError);
}

}  // namespace
}  // namespace crqat
