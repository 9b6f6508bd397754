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

#ifndef CRQAT_MODEL_HPP_
#define CRQAT_MODEL_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "crqat/quantization.hpp"
#include "crqat/tensor.hpp"

namespace crqat {

enum class Role { kStudent, kTeacher };

enum class LayerKind { kConv, kLinear, kRelu, kAvgPool, kFlatten, kQuant, kAdd };

/// One node of the model program. `inputs` index earlier layer outputs;
/// -1 is the model input.
struct LayerDef {
  LayerKind kind = LayerKind::kRelu;
  std::string name;
  std::vector<int> inputs{-1};
  std::size_t in_features = 0;   ///< channels for conv, features for linear
  std::size_t out_features = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t window = 0;  ///< pool window
  int weight_param = -1;
  int bias_param = -1;
  int weight_site = -1;  ///< QuantSite of the weight (conv/linear)
  int act_site = -1;     ///< QuantSite applied by a kQuant layer
};

enum class SiteKind { kWeight, kActivation };

/// A quantizer attached to a weight tensor or an activation.
struct QuantSite {
  std::string name;
  SiteKind kind = SiteKind::kWeight;
  int bits = 8;
  int param = -1;  ///< weight parameter index for weight sites
  QuantSpec spec;  ///< zero points and metadata; step values live in `step`
  Tensor step;     ///< [groups], learnable in the student
  bool calibrated = false;

  /// spec with the current step values.
  QuantSpec current_spec() const;
};

struct Parameter {
  std::string name;
  Tensor value;
  bool decay = true;  ///< subject to weight decay
};

struct ModelOptions {
  std::size_t in_channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t resnet_width_divisor = 4;
};

/// Parameters and quantizers of one network role.
///
/// The teacher additionally keeps its EMA state in double precision
/// (`ema_params`, `ema_steps`); its float tensors are the rounded shadow.
struct ModelState {
  std::string arch;
  std::size_t num_classes = 0;
  int wbits = 8;
  int abits = 8;
  ModelOptions options;
  Role role = Role::kStudent;
  bool quantization_enabled = true;

  std::vector<LayerDef> layers;
  std::vector<Parameter> params;
  std::vector<QuantSite> sites;

  std::vector<std::vector<double>> ema_params;
  std::vector<std::vector<double>> ema_steps;

  bool calibrated() const;
  std::size_t parameter_count() const;
  /// Indices of conv/linear layers in program order.
  std::vector<std::size_t> weighted_layers() const;
  void zero_grad();
  /// Deep copy; gradient flags are preserved, gradients are not.
  ModelState clone() const;
};

/// Architectures: "tinycnn", "resnet18_narrow", "mlp". Weights use
/// per-channel `wbits`, activations per-tensor `abits`; the first and last
/// weighted layers (weights and their input activation) use 8 bits.
ModelState build_model(const std::string& arch, std::size_t num_classes, int wbits, int abits,
                       std::uint64_t seed = 0, const ModelOptions& options = {});

/// Logits for x [N,C,H,W]. Weights are fake-quantized before use and every
/// activation site after its op, unless quantization is disabled. Teacher
/// forwards never record a graph.
Tensor forward_quantized(const ModelState& model, const Tensor& x);

/// Min/max calibration of every site: weights from their values, activations
/// from an unquantized forward over `images` (already normalized).
void calibrate_model(ModelState& model, const Tensor& images, std::vector<CalibrationWarning>* warnings = nullptr,
                     std::size_t chunk = 100);

/// Deep copy with role teacher and no gradient tracking.
ModelState copy_into_teacher(const ModelState& student);

}  // namespace crqat

#endif  // CRQAT_MODEL_HPP_
