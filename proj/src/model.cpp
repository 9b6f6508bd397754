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

#include "crqat/model.hpp"

#include <cmath>

#include "crqat/errors.hpp"
#include "crqat/ops.hpp"
#include "crqat/rng.hpp"

namespace crqat {

QuantSpec QuantSite::current_spec() const {
  QuantSpec s = spec;
  if (step.defined()) s.step = step.values();
  return s;
}

bool ModelState::calibrated() const {
  return std::all_of(sites.begin(), sites.end(), [](const QuantSite& s) { return s.calibrated; });
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.numel();
  return n;
}

std::vector<std::size_t> ModelState::weighted_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].kind == LayerKind::kConv || layers[i].kind == LayerKind::kLinear) out.push_back(i);
  return out;
}

void ModelState::zero_grad() {
  for (auto& p : params) p.value.zero_grad();
  for (auto& s : sites)
    if (s.step.defined()) s.step.zero_grad();
}

ModelState ModelState::clone() const {
  ModelState out = *this;
  for (auto& p : out.params) {
    const bool grad = p.value.requires_grad();
    p.value = p.value.clone();
    p.value.set_requires_grad(grad);
  }
  for (auto& s : out.sites)
    if (s.step.defined()) {
      const bool grad = s.step.requires_grad();
      s.step = s.step.clone();
      s.step.set_requires_grad(grad);
    }
  return out;
}

namespace {

class Builder {
 public:
  Builder(ModelState& model, std::uint64_t seed) : m_(model), rng_(hash_key({seed, 0x1417ull})) {}

  int quant(int input, int bits, const std::string& name) {
    QuantSite site;
    site.name = name;
    site.kind = SiteKind::kActivation;
    site.bits = bits;
    site.spec.bits = bits;
    m_.sites.push_back(std::move(site));
    LayerDef def;
    def.kind = LayerKind::kQuant;
    def.name = name;
    def.inputs = {input};
    def.act_site = static_cast<int>(m_.sites.size()) - 1;
    return push(def);
  }

  int conv(int input, std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride, std::size_t pad, int bits,
           const std::string& name) {
    LayerDef def;
    def.kind = LayerKind::kConv;
    def.name = name;
    def.inputs = {input};
    def.in_features = cin;
    def.out_features = cout;
    def.kernel = k;
    def.stride = stride;
    def.padding = pad;
    attach_weight(def, {cout, cin, k, k}, cin * k * k, bits);
    return push(def);
  }

  int linear(int input, std::size_t in, std::size_t out, int bits, const std::string& name) {
    LayerDef def;
    def.kind = LayerKind::kLinear;
    def.name = name;
    def.inputs = {input};
    def.in_features = in;
    def.out_features = out;
    attach_weight(def, {out, in}, in, bits);
    return push(def);
  }

  int simple(LayerKind kind, int input, const std::string& name, std::size_t window = 0) {
    LayerDef def;
    def.kind = kind;
    def.name = name;
    def.inputs = {input};
    def.window = window;
    return push(def);
  }

  int add(int a, int b, const std::string& name) {
    LayerDef def;
    def.kind = LayerKind::kAdd;
    def.name = name;
    def.inputs = {a, b};
    return push(def);
  }

 private:
  int push(const LayerDef& def) {
    m_.layers.push_back(def);
    return static_cast<int>(m_.layers.size()) - 1;
  }

  // He-uniform weights, zero bias.
  void attach_weight(LayerDef& def, const Shape& shape, std::size_t fan_in, int bits) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<float> w(numel(shape));
    for (auto& v : w) v = static_cast<float>(rng_.uniform(-bound, bound));
    m_.params.push_back({def.name + ".weight", Tensor(shape, std::move(w), true), true});
    def.weight_param = static_cast<int>(m_.params.size()) - 1;
    m_.params.push_back({def.name + ".bias", Tensor::zeros({shape[0]}, true), true});
    def.bias_param = static_cast<int>(m_.params.size()) - 1;

    QuantSite site;
    site.name = def.name + ".weight";
    site.kind = SiteKind::kWeight;
    site.bits = bits;
    site.param = def.weight_param;
    site.spec.bits = bits;
    site.spec.axis = 0;
    m_.sites.push_back(std::move(site));
    def.weight_site = static_cast<int>(m_.sites.size()) - 1;
  }

  ModelState& m_;
  Rng rng_;
};

void build_tinycnn(Builder& b, const ModelState& m) {
  const auto& o = m.options;
  int x = b.quant(-1, 8, "conv1.input");
  x = b.conv(x, o.in_channels, 16, 3, 1, 1, 8, "conv1");
  x = b.simple(LayerKind::kRelu, x, "relu1");
  x = b.simple(LayerKind::kAvgPool, x, "pool1", 2);
  x = b.quant(x, m.abits, "conv2.input");
  x = b.conv(x, 16, 32, 3, 1, 1, m.wbits, "conv2");
  x = b.simple(LayerKind::kRelu, x, "relu2");
  x = b.simple(LayerKind::kAvgPool, x, "pool2", 2);
  x = b.simple(LayerKind::kFlatten, x, "flatten");
  x = b.quant(x, 8, "fc.input");
  b.linear(x, 32 * (o.height / 4) * (o.width / 4), m.num_classes, 8, "fc");
}

void build_mlp(Builder& b, const ModelState& m) {
  const auto& o = m.options;
  int x = b.simple(LayerKind::kFlatten, -1, "flatten");
  x = b.quant(x, 8, "fc1.input");
  x = b.linear(x, o.in_channels * o.height * o.width, 256, 8, "fc1");
  x = b.simple(LayerKind::kRelu, x, "relu1");
  x = b.quant(x, m.abits, "fc2.input");
  x = b.linear(x, 256, 128, m.wbits, "fc2");
  x = b.simple(LayerKind::kRelu, x, "relu2");
  x = b.quant(x, 8, "fc3.input");
  b.linear(x, 128, m.num_classes, 8, "fc3");
}

// CIFAR ResNet-18 layout: 3x3 stem, four stages of two basic blocks,
// global average pool, linear head. No batch normalization.
void build_resnet18(Builder& b, const ModelState& m) {
  const auto& o = m.options;
  const std::size_t div = std::max<std::size_t>(o.resnet_width_divisor, 1);
  const std::size_t widths[4] = {64 / div, 128 / div, 256 / div, 512 / div};
  int x = b.quant(-1, 8, "stem.input");
  x = b.conv(x, o.in_channels, widths[0], 3, 1, 1, 8, "stem");
  x = b.simple(LayerKind::kRelu, x, "stem.relu");
  x = b.quant(x, m.abits, "stem.act");
  std::size_t cin = widths[0], spatial = o.height;
  for (std::size_t s = 0; s < 4; ++s)
    for (std::size_t blk = 0; blk < 2; ++blk) {
      const std::string p = "layer" + std::to_string(s + 1) + "." + std::to_string(blk);
      const std::size_t stride = (s > 0 && blk == 0) ? 2 : 1;
      const std::size_t cout = widths[s];
      int y = b.conv(x, cin, cout, 3, stride, 1, m.wbits, p + ".conv1");
      y = b.simple(LayerKind::kRelu, y, p + ".relu1");
      y = b.quant(y, m.abits, p + ".act1");
      y = b.conv(y, cout, cout, 3, 1, 1, m.wbits, p + ".conv2");
      int shortcut = x;
      if (stride != 1 || cin != cout) shortcut = b.conv(x, cin, cout, 1, stride, 0, m.wbits, p + ".downsample");
      y = b.add(y, shortcut, p + ".add");
      y = b.simple(LayerKind::kRelu, y, p + ".relu2");
      x = b.quant(y, m.abits, p + ".act2");
      cin = cout;
      spatial /= stride;
    }
  x = b.simple(LayerKind::kAvgPool, x, "avgpool", spatial);
  x = b.simple(LayerKind::kFlatten, x, "flatten");
  x = b.quant(x, 8, "fc.input");
  b.linear(x, cin, m.num_classes, 8, "fc");
}

enum class ForwardMode { kQuantized, kPlain, kObserve };

Tensor run(const ModelState& m, const Tensor& input, ForwardMode mode, std::vector<CalibrationObserver>* observers) {
  if (input.rank() != 4 || input.dim(1) != m.options.in_channels || input.dim(2) != m.options.height ||
      input.dim(3) != m.options.width)
    throw DimensionError("forward: input " + to_string(input.shape()) + " does not match [N," +
                         std::to_string(m.options.in_channels) + "," + std::to_string(m.options.height) + "," +
                         std::to_string(m.options.width) + "]");
  const bool quantize = mode == ForwardMode::kQuantized && m.quantization_enabled;
  if (quantize && !m.calibrated()) throw StateError("forward: model '" + m.arch + "' has uncalibrated quantizers");

  std::vector<Tensor> outs(m.layers.size());
  auto in = [&](const LayerDef& def, std::size_t k) -> const Tensor& {
    const int src = def.inputs.at(k);
    return src < 0 ? input : outs[static_cast<std::size_t>(src)];
  };
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& def = m.layers[i];
    switch (def.kind) {
      case LayerKind::kConv:
      case LayerKind::kLinear: {
        Tensor w = m.params[static_cast<std::size_t>(def.weight_param)].value;
        if (quantize) {
          const auto& site = m.sites[static_cast<std::size_t>(def.weight_site)];
          w = fake_quantize(w, site.step, site.spec);
        }
        const Tensor& bias = m.params[static_cast<std::size_t>(def.bias_param)].value;
        outs[i] = def.kind == LayerKind::kConv ? conv2d(in(def, 0), w, bias, def.stride, def.padding)
                                               : linear(in(def, 0), w, bias);
        break;
      }
      case LayerKind::kRelu: outs[i] = relu(in(def, 0)); break;
      case LayerKind::kAvgPool: outs[i] = avg_pool2d(in(def, 0), def.window); break;
      case LayerKind::kFlatten: outs[i] = flatten(in(def, 0)); break;
      case LayerKind::kAdd: outs[i] = add(in(def, 0), in(def, 1)); break;
      case LayerKind::kQuant: {
        const auto& site = m.sites[static_cast<std::size_t>(def.act_site)];
        if (mode == ForwardMode::kObserve) (*observers)[static_cast<std::size_t>(def.act_site)].observe(in(def, 0));
        outs[i] = quantize ? fake_quantize(in(def, 0), site.step, site.spec) : in(def, 0);
        break;
      }
    }
  }
  return outs.back();
}

}  // namespace

ModelState build_model(const std::string& arch, std::size_t num_classes, int wbits, int abits, std::uint64_t seed,
                       const ModelOptions& options) {
  auto allowed = [](int b) { return b == 2 || b == 3 || b == 4 || b == 8; };
  if (!allowed(wbits) || !allowed(abits))
    throw ConfigError("build_model: bit-widths must be one of 2, 3, 4, 8 (got W" + std::to_string(wbits) + "A" +
                      std::to_string(abits) + ")");
  if (num_classes < 2) throw ConfigError("build_model: need at least two classes");
  ModelState m;
  m.arch = arch;
  m.num_classes = num_classes;
  m.wbits = wbits;
  m.abits = abits;
  m.options = options;
  Builder b(m, seed);
  if (arch == "tinycnn") {
    if (options.height % 4 || options.width % 4) throw ConfigError("tinycnn: input extents must be multiples of 4");
    build_tinycnn(b, m);
  } else if (arch == "mlp") {
    build_mlp(b, m);
  } else if (arch == "resnet18_narrow") {
    if (options.height % 8 || options.width % 8 || 512 / std::max<std::size_t>(options.resnet_width_divisor, 1) == 0)
      throw ConfigError("resnet18_narrow: input extents must be multiples of 8");
    build_resnet18(b, m);
  } else {
    throw ConfigError("build_model: unknown architecture '" + arch + "' (expected tinycnn, resnet18_narrow or mlp)");
  }
  return m;
}

Tensor forward_quantized(const ModelState& model, const Tensor& x) {
  if (model.role == Role::kTeacher) {
    NoGradGuard guard;
    return run(model, x, ForwardMode::kQuantized, nullptr);
  }
  return run(model, x, ForwardMode::kQuantized, nullptr);
}

void calibrate_model(ModelState& model, const Tensor& images, std::vector<CalibrationWarning>* warnings,
                     std::size_t chunk) {
  if (images.rank() != 4 || images.dim(0) == 0) throw UsageError("calibrate_model: need a [N,C,H,W] calibration batch");
  std::vector<CalibrationObserver> observers;
  for (const auto& site : model.sites)
    observers.push_back(site.kind == SiteKind::kWeight ? CalibrationObserver::per_channel(0)
                                                       : CalibrationObserver::per_tensor());
  for (std::size_t i = 0; i < model.sites.size(); ++i)
    if (model.sites[i].kind == SiteKind::kWeight)
      observers[i].observe(model.params[static_cast<std::size_t>(model.sites[i].param)].value);
  {
    NoGradGuard guard;
    const std::size_t n = images.dim(0);
    for (std::size_t begin = 0; begin < n; begin += chunk)
      run(model, slice_rows(images, begin, std::min(n, begin + chunk)), ForwardMode::kObserve, &observers);
  }
  for (std::size_t i = 0; i < model.sites.size(); ++i) {
    auto& site = model.sites[i];
    std::vector<CalibrationWarning> local;
    site.spec = calibrate(observers[i], site.bits, &local);
    site.spec.step_learnable = true;
    site.step = Tensor({site.spec.groups()}, site.spec.step, model.role == Role::kStudent);
    site.calibrated = true;
    if (warnings)
      for (auto& w : local) warnings->push_back({w.channel, site.name + ": " + w.message});
  }
  model.ema_params.clear();
  model.ema_steps.clear();
}

ModelState copy_into_teacher(const ModelState& student) {
  if (!student.calibrated()) throw StateError("copy_into_teacher: student is not calibrated");
  ModelState t = student.clone();
  t.role = Role::kTeacher;
  t.ema_params.clear();
  t.ema_steps.clear();
  for (auto& p : t.params) {
    p.value.set_requires_grad(false);
    t.ema_params.emplace_back(p.value.data().begin(), p.value.data().end());
  }
  for (auto& s : t.sites) {
    s.step.set_requires_grad(false);
    t.ema_steps.emplace_back(s.step.data().begin(), s.step.data().end());
  }
  return t;
}

}  // namespace crqat
