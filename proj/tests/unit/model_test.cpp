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

#include <algorithm>
#include <cmath>
#include <vector>

#include "crqat/model.hpp"
#include "crqat/ops.hpp"
#include "crqat/rng.hpp"

namespace crqat {
namespace {

Tensor random_batch(std::size_t n, std::uint64_t seed, std::size_t h = 32, std::size_t w = 32) {
  Rng rng(seed);
  std::vector<float> v(n * 3 * h * w);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.5, 1.5));
  return Tensor({n, 3, h, w}, v);
}

ModelState calibrated(const std::string& arch, int wbits, int abits, std::uint64_t seed = 0) {
  ModelState m = build_model(arch, 10, wbits, abits, seed);
  calibrate_model(m, random_batch(16, seed + 100));
  return m;
}

const QuantSite& site(const ModelState& m, const std::string& name) {
  const auto it = std::find_if(m.sites.begin(), m.sites.end(), [&](const QuantSite& s) { return s.name == name; });
  if (it == m.sites.end()) throw std::runtime_error("no site " + name);
  return *it;
}

// Input activation site of a weighted layer: the kQuant layer feeding it.
int input_site(const ModelState& m, std::size_t layer) {
  const int src = m.layers[layer].inputs[0];
  return src >= 0 && m.layers[static_cast<std::size_t>(src)].kind == LayerKind::kQuant
             ? m.layers[static_cast<std::size_t>(src)].act_site
             : -1;
}

TEST(BuildModel, TinyCnnW2A4BitPolicy) {
  const ModelState m = build_model("tinycnn", 10, 2, 4);
  EXPECT_EQ(site(m, "conv1.weight").bits, 8);
  EXPECT_EQ(site(m, "conv1.input").bits, 8);
  EXPECT_EQ(site(m, "conv2.weight").bits, 2);
  EXPECT_EQ(site(m, "conv2.input").bits, 4);
  EXPECT_EQ(site(m, "fc.weight").bits, 8);
  EXPECT_EQ(site(m, "fc.input").bits, 8);
  EXPECT_EQ(site(m, "conv2.weight").spec.axis, std::optional<std::size_t>(0));
  EXPECT_FALSE(site(m, "conv2.input").spec.axis);
}

TEST(BuildModel, W8A8IsUniform) {
  for (const char* arch : {"tinycnn", "mlp", "resnet18_narrow"})
    for (const auto& s : build_model(arch, 10, 8, 8).sites) EXPECT_EQ(s.bits, 8) << arch << " " << s.name;
}

TEST(BuildModel, OnlyFirstAndLastLayersAreEightBit) {
  for (const char* arch : {"tinycnn", "mlp", "resnet18_narrow"})
    for (int wb : {2, 3, 4})
      for (int ab : {2, 4}) {
        const ModelState m = build_model(arch, 10, wb, ab);
        const auto weighted = m.weighted_layers();
        ASSERT_GE(weighted.size(), 3u);
        for (std::size_t k = 0; k < weighted.size(); ++k) {
          const bool edge = k == 0 || k + 1 == weighted.size();
          const auto& def = m.layers[weighted[k]];
          EXPECT_EQ(m.sites[static_cast<std::size_t>(def.weight_site)].bits, edge ? 8 : wb) << arch << " " << def.name;
          const int in = input_site(m, weighted[k]);
          if (edge) {
            ASSERT_GE(in, 0) << arch << " " << def.name;
            EXPECT_EQ(m.sites[static_cast<std::size_t>(in)].bits, 8) << arch << " " << def.name;
          }
        }
        for (const auto& s : m.sites)
          if (s.kind == SiteKind::kActivation && s.bits != 8) EXPECT_EQ(s.bits, ab) << arch << " " << s.name;
      }
}

TEST(BuildModel, TinyCnnParameterCount) {
  // conv1 16*3*3*3 + 16, conv2 32*16*3*3 + 32, fc 10*32*8*8 + 10.
  EXPECT_EQ(build_model("tinycnn", 10, 2, 4).parameter_count(), 448u + 4640u + 20490u);
}

TEST(BuildModel, ParameterCountMatchesShapeWalk) {
  for (const char* arch : {"tinycnn", "mlp", "resnet18_narrow"}) {
    const ModelState m = build_model(arch, 10, 4, 4);
    std::size_t walk = 0;
    for (const auto& def : m.layers) {
      if (def.kind == LayerKind::kConv) walk += def.out_features * def.in_features * def.kernel * def.kernel + def.out_features;
      if (def.kind == LayerKind::kLinear) walk += def.out_features * def.in_features + def.out_features;
    }
    EXPECT_EQ(m.parameter_count(), walk) << arch;
  }
}

TEST(BuildModel, RejectsUnknownArchAndBits) {
  EXPECT_THROW(build_model("vgg", 10, 4, 4), ConfigError);
  EXPECT_THROW(build_model("tinycnn", 10, 5, 4), ConfigError);
  EXPECT_THROW(build_model("tinycnn", 10, 4, 1), ConfigError);
}

TEST(BuildModel, SeedFixesInitialization) {
  const auto a = build_model("tinycnn", 10, 2, 4, 3), b = build_model("tinycnn", 10, 2, 4, 3),
             c = build_model("tinycnn", 10, 2, 4, 4);
  EXPECT_EQ(a.params[0].value.values(), b.params[0].value.values());
  EXPECT_NE(a.params[0].value.values(), c.params[0].value.values());
}

TEST(Forward, OutputShapes) {
  for (const char* arch : {"tinycnn", "mlp", "resnet18_narrow"}) {
    const ModelState m = calibrated(arch, 2, 4);
    EXPECT_EQ(forward_quantized(m, random_batch(3, 1)).shape(), (Shape{3, 10})) << arch;
  }
}

TEST(Forward, UncalibratedIsStateError) {
  const ModelState m = build_model("tinycnn", 10, 2, 4);
  EXPECT_THROW(forward_quantized(m, random_batch(1, 1)), StateError);
  EXPECT_THROW(forward_quantized(calibrated("tinycnn", 2, 4), random_batch(1, 1, 16, 16)), DimensionError);
}

TEST(Forward, DisabledQuantizationEqualsPlainForward) {
  ModelState m = calibrated("tinycnn", 2, 4);
  m.quantization_enabled = false;
  const Tensor x = random_batch(4, 2);
  const auto& p = m.params;
  Tensor y = conv2d(x, p[0].value, p[1].value, 1, 1);
  y = avg_pool2d(relu(y), 2);
  y = conv2d(y, p[2].value, p[3].value, 1, 1);
  y = flatten(avg_pool2d(relu(y), 2));
  y = linear(y, p[4].value, p[5].value);
  EXPECT_EQ(forward_quantized(m, x).values(), y.values());
}

// One quantized linear layer over a two-pixel input, with hand-set specs.
ModelState single_linear() {
  ModelState m;
  m.arch = "hand";
  m.num_classes = 2;
  m.options = {1, 1, 2, 4};
  LayerDef flat;
  flat.kind = LayerKind::kFlatten;
  flat.name = "flatten";
  LayerDef q;
  q.kind = LayerKind::kQuant;
  q.name = "fc.input";
  q.inputs = {0};
  q.act_site = 0;
  LayerDef fc;
  fc.kind = LayerKind::kLinear;
  fc.name = "fc";
  fc.inputs = {1};
  fc.in_features = 2;
  fc.out_features = 2;
  fc.weight_param = 0;
  fc.bias_param = 1;
  fc.weight_site = 1;
  m.layers = {flat, q, fc};
  m.params = {{"fc.weight", Tensor({2, 2}, {0.3f, -0.7f, 1.1f, 0.2f}, true), true},
              {"fc.bias", Tensor({2}, {0.25f, -1.0f}, true), true}};
  QuantSite act;
  act.name = "fc.input";
  act.kind = SiteKind::kActivation;
  act.bits = 3;
  act.spec.bits = 3;
  act.spec.step = {0.5f};
  act.spec.zero_point = {4};
  act.step = Tensor({1}, {0.5f}, true);
  act.calibrated = true;
  QuantSite wt;
  wt.name = "fc.weight";
  wt.kind = SiteKind::kWeight;
  wt.bits = 2;
  wt.param = 0;
  wt.spec.bits = 2;
  wt.spec.axis = 0;
  wt.spec.step = {0.5f, 1.0f};
  wt.spec.zero_point = {2, 1};
  wt.step = Tensor({2}, {0.5f, 1.0f}, true);
  wt.calibrated = true;
  m.sites = {act, wt};
  return m;
}

TEST(Forward, SingleLinearHandOracle) {
  const ModelState m = single_linear();
  // Input [1, -0.5] is on the activation grid. Row 0 weights: 0.3/0.5 = 0.6
  // -> 1 -> 0.5, -0.7/0.5 = -1.4 -> -1 -> -0.5. Row 1: 1.1 -> 1, 0.2 -> 0.
  // Logits: 0.5 + 0.25 + 0.25 = 1, 1 + 0 - 1 = 0.
  const Tensor logits = forward_quantized(m, Tensor({1, 1, 1, 2}, {1.0f, -0.5f}));
  EXPECT_EQ(logits.values(), (std::vector<float>{1.0f, 0.0f}));
}

TEST(Forward, OnGridWeightsAndInputsEqualFullPrecision) {
  ModelState m = single_linear();
  m.params[0].value = Tensor({2, 2}, {0.5f, -1.0f, 2.0f, -1.0f}, true);
  const Tensor x({3, 1, 1, 2}, {1.0f, -0.5f, 0.0f, 1.5f, -2.0f, 0.5f});
  const Tensor quant = forward_quantized(m, x);
  m.quantization_enabled = false;
  EXPECT_EQ(quant.values(), forward_quantized(m, x).values());
}

TEST(Forward, EightBitGapIsSmall) {
  ModelState m = calibrated("tinycnn", 8, 8);
  const Tensor x = random_batch(8, 5);
  const Tensor q = forward_quantized(m, x);
  m.quantization_enabled = false;
  const Tensor fp = forward_quantized(m, x);
  double bound = 0.0;
  for (const auto& s : m.sites) bound += 10.0 * *std::max_element(s.step.data().begin(), s.step.data().end());
  for (std::size_t i = 0; i < q.numel(); ++i) EXPECT_LT(std::abs(q[i] - fp[i]), bound);
}

TEST(Forward, GradientsReachWeightsAndSteps) {
  ModelState m = calibrated("tinycnn", 2, 4);
  const std::vector<int> labels{1, 2};
  backward(cross_entropy(forward_quantized(m, random_batch(2, 6)), labels));
  for (const auto& p : m.params) EXPECT_TRUE(p.value.has_grad()) << p.name;
  for (const auto& s : m.sites) EXPECT_TRUE(s.step.has_grad()) << s.name;
}

TEST(Teacher, CopyIsDeepAndEqual) {
  ModelState student = calibrated("tinycnn", 2, 4);
  const ModelState teacher = copy_into_teacher(student);
  EXPECT_EQ(teacher.role, Role::kTeacher);
  for (std::size_t i = 0; i < student.params.size(); ++i) {
    EXPECT_EQ(teacher.params[i].value.values(), student.params[i].value.values());
    EXPECT_FALSE(teacher.params[i].value.requires_grad());
  }
  for (std::size_t i = 0; i < student.sites.size(); ++i) {
    EXPECT_EQ(teacher.sites[i].spec, student.sites[i].spec);
    EXPECT_EQ(teacher.sites[i].step.values(), student.sites[i].step.values());
  }
  const Tensor x = random_batch(3, 8);
  EXPECT_EQ(forward_quantized(teacher, x).values(), forward_quantized(student, x).values());

  student.params[0].value[0] += 1.0f;
  student.sites[0].step[0] *= 2.0f;
  EXPECT_NE(teacher.params[0].value[0], student.params[0].value[0]);
  EXPECT_NE(teacher.sites[0].step[0], student.sites[0].step[0]);
}

TEST(Teacher, ForwardRecordsNoGraph) {
  const ModelState teacher = copy_into_teacher(calibrated("tinycnn", 2, 4));
  const Tensor y = forward_quantized(teacher, random_batch(2, 9));
  EXPECT_TRUE(y.is_leaf());
  EXPECT_FALSE(y.impl()->needs_grad());
}

TEST(Calibration, SetsEverySite) {
  const ModelState m = calibrated("resnet18_narrow", 4, 4);
  EXPECT_TRUE(m.calibrated());
  for (const auto& s : m.sites) {
    EXPECT_TRUE(s.calibrated);
    EXPECT_NO_THROW(s.current_spec().validate());
  }
}

}  // namespace
}  // namespace crqat
