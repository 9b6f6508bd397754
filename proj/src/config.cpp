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

#include "crqat/config.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "crqat/errors.hpp"

namespace crqat {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t begin = 0;
  while (true) {
    const auto end = s.find(sep, begin);
    parts.push_back(trim(s.substr(begin, end == std::string_view::npos ? std::string_view::npos : end - begin)));
    if (end == std::string_view::npos) break;
    begin = end + 1;
  }
  return parts;
}

template <class T>
T parse_number(std::string_view text, const char* what) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc{} || ptr != end)
    throw ConfigError("expected " + std::string(what) + ", got '" + std::string(text) + "'");
  return value;
}

std::uint64_t parse_uint(std::string_view text) { return parse_number<std::uint64_t>(text, "a non-negative integer"); }
int parse_int(std::string_view text) { return parse_number<int>(text, "an integer"); }
double parse_real(std::string_view text) { return parse_number<double>(text, "a number"); }

bool parse_bool(std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("expected true or false, got '" + std::string(text) + "'");
}

// Shortest text that parses back to the same double.
std::string format_real(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <class T, class F>
std::string join(const std::vector<T>& items, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + fmt(items[i]);
  return out;
}

struct Key {
  const char* name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Field>
Key uint_key(const char* name, Field field) {
  return {name, [field](RunConfig& c, std::string_view v) { field(c) = static_cast<std::size_t>(parse_uint(v)); },
          [field](const RunConfig& c) { return std::to_string(field(c)); }};
}

template <class Field>
Key real_key(const char* name, Field field) {
  return {name, [field](RunConfig& c, std::string_view v) { field(c) = parse_real(v); },
          [field](const RunConfig& c) { return format_real(field(c)); }};
}

template <class Field>
Key int_key(const char* name, Field field) {
  return {name, [field](RunConfig& c, std::string_view v) { field(c) = parse_int(v); },
          [field](const RunConfig& c) { return std::to_string(field(c)); }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back({"arch", [](RunConfig& c, std::string_view v) { c.arch = std::string(v); },
                 [](const RunConfig& c) { return c.arch; }});
    k.push_back(int_key("wbits", [](auto& c) -> auto& { return c.wbits; }));
    k.push_back(int_key("abits", [](auto& c) -> auto& { return c.abits; }));
    k.push_back(uint_key("num_classes", [](auto& c) -> auto& { return c.num_classes; }));
    k.push_back(uint_key("resnet_width_divisor", [](auto& c) -> auto& { return c.resnet_width_divisor; }));
    k.push_back({"dataset", [](RunConfig& c, std::string_view v) { c.dataset = std::string(v); },
                 [](const RunConfig& c) { return c.dataset; }});
    k.push_back({"data_dir", [](RunConfig& c, std::string_view v) { c.data_dir = std::string(v); },
                 [](const RunConfig& c) { return c.data_dir; }});
    k.push_back(uint_key("train_size", [](auto& c) -> auto& { return c.train_size; }));
    k.push_back(uint_key("test_size", [](auto& c) -> auto& { return c.test_size; }));
    k.push_back({"data_seed", [](RunConfig& c, std::string_view v) { c.data_seed = parse_uint(v); },
                 [](const RunConfig& c) { return std::to_string(c.data_seed); }});
    k.push_back(real_key("labeled_fraction", [](auto& c) -> auto& { return c.labeled_fraction; }));
    k.push_back(uint_key("calibration_size", [](auto& c) -> auto& { return c.calibration_size; }));
    k.push_back(uint_key("eval_samples", [](auto& c) -> auto& { return c.eval_samples; }));
    k.push_back({"seeds",
                 [](RunConfig& c, std::string_view v) {
                   c.seeds.clear();
                   for (auto part : split(v, ',')) c.seeds.push_back(parse_uint(part));
                 },
                 [](const RunConfig& c) { return join(c.seeds, [](auto s) { return std::to_string(s); }); }});
    k.push_back({"modes",
                 [](RunConfig& c, std::string_view v) {
                   c.modes.clear();
                   for (auto part : split(v, ',')) c.modes.push_back(parse_mode(part));
                 },
                 [](const RunConfig& c) { return join(c.modes, [](Mode m) { return to_string(m); }); }});
    k.push_back(real_key("ema_alpha", [](auto& c) -> auto& { return c.train.ema_alpha; }));
    k.push_back(real_key("cr_strength", [](auto& c) -> auto& { return c.train.cr_strength; }));
    k.push_back(int_key("warmup_epochs", [](auto& c) -> auto& { return c.train.warmup_epochs; }));
    k.push_back(int_key("epochs", [](auto& c) -> auto& { return c.train.epochs; }));
    k.push_back(uint_key("batch_size", [](auto& c) -> auto& { return c.train.batch_size; }));
    k.push_back({"ratio",
                 [](RunConfig& c, std::string_view v) {
                   const auto parts = split(v, ':');
                   if (parts.size() != 2) throw ConfigError("expected labeled:unlabeled, got '" + std::string(v) + "'");
                   c.train.labeled_part = parse_uint(parts[0]);
                   c.train.unlabeled_part = parse_uint(parts[1]);
                 },
                 [](const RunConfig& c) {
                   return std::to_string(c.train.labeled_part) + ":" + std::to_string(c.train.unlabeled_part);
                 }});
    k.push_back(real_key("base_lr", [](auto& c) -> auto& { return c.train.base_lr; }));
    k.push_back(real_key("momentum", [](auto& c) -> auto& { return c.train.momentum; }));
    k.push_back(real_key("weight_decay", [](auto& c) -> auto& { return c.train.weight_decay; }));
    k.push_back({"divergence",
                 [](RunConfig& c, std::string_view v) {
                   if (v == "mse")
                     c.train.divergence = Divergence::kMse;
                   else if (v == "kl")
                     c.train.divergence = Divergence::kKl;
                   else
                     throw ConfigError("expected mse or kl, got '" + std::string(v) + "'");
                 },
                 [](const RunConfig& c) { return std::string(c.train.divergence == Divergence::kMse ? "mse" : "kl"); }});
    k.push_back({"augmentation",
                 [](RunConfig& c, std::string_view v) { c.train.augmentation.transforms = parse_augmentation(v).transforms; },
                 [](const RunConfig& c) { return to_string(c.train.augmentation); }});
    k.push_back(uint_key("trace_every", [](auto& c) -> auto& { return c.trace_every; }));
    k.push_back({"out_dir", [](RunConfig& c, std::string_view v) { c.out_dir = std::string(v); },
                 [](const RunConfig& c) { return c.out_dir; }});
    k.push_back({"save_checkpoints", [](RunConfig& c, std::string_view v) { c.save_checkpoints = parse_bool(v); },
                 [](const RunConfig& c) { return std::string(c.save_checkpoints ? "true" : "false"); }});
    return k;
  }();
  return table;
}

const Key* find_key(std::string_view name) {
  for (const auto& k : keys())
    if (name == k.name) return &k;
  return nullptr;
}

}  // namespace

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::kCr: return "cr";
    case Mode::kBaseline: return "baseline";
    default: return "fp";
  }
}

Mode parse_mode(std::string_view name) {
  if (name == "cr") return Mode::kCr;
  if (name == "baseline") return Mode::kBaseline;
  if (name == "fp") return Mode::kFp;
  throw ConfigError("unknown mode '" + std::string(name) + "' (expected cr, baseline or fp)");
}

void RunConfig::validate() const {
  try {
    train.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  if (arch != "tinycnn" && arch != "resnet18_narrow" && arch != "mlp")
    throw ConfigError("arch: unknown architecture '" + arch + "'");
  for (int bits : {wbits, abits})
    if (bits != 2 && bits != 3 && bits != 4 && bits != 8)
      throw ConfigError("wbits/abits: bit-width " + std::to_string(bits) + " not in {2,3,4,8}");
  if (num_classes < 2) throw ConfigError("num_classes: need at least 2 classes");
  if (resnet_width_divisor == 0) throw ConfigError("resnet_width_divisor: must be positive");
  if (dataset != "synthetic" && dataset != "cifar10")
    throw ConfigError("dataset: expected synthetic or cifar10, got '" + dataset + "'");
  if (dataset == "cifar10" && data_dir.empty()) throw ConfigError("data_dir: required for dataset cifar10");
  if (dataset == "cifar10" && num_classes != 10) throw ConfigError("num_classes: cifar10 has 10 classes");
  if (train_size == 0 || test_size == 0) throw ConfigError("train_size/test_size: must be positive");
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0))
    throw ConfigError("labeled_fraction: must lie in (0, 1]");
  if (calibration_size == 0) throw ConfigError("calibration_size: must be positive");
  if (eval_samples == 0 || eval_samples > test_size)
    throw ConfigError("eval_samples: must lie in [1, test_size]");
  if (seeds.empty()) throw ConfigError("seeds: at least one seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("seeds: duplicate seed");
  if (modes.empty()) throw ConfigError("modes: at least one mode");
  if (std::set<Mode>(modes.begin(), modes.end()).size() != modes.size()) throw ConfigError("modes: duplicate mode");
  if (trace_every == 0) throw ConfigError("trace_every: must be positive");
  if (out_dir.empty()) throw ConfigError("out_dir: must not be empty");
  try {
    train.augmentation.validate(32, 32);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("augmentation: ") + e.what());
  }
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  const Key* k = find_key(key);
  if (!k) throw ConfigError("unknown key '" + std::string(key) + "'");
  try {
    k->set(config, trim(value));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

RunConfig parse_config(std::string_view text, const std::string& origin) {
  RunConfig config;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  for (auto raw : split(text, '\n')) {
    ++line_no;
    auto line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto where = origin + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
    const auto key = trim(line.substr(0, eq));
    if (!seen.insert(std::string(key)).second) throw ConfigError(where + "key '" + std::string(key) + "' repeated");
    try {
      set_config_value(config, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), file.string());
}

std::string to_text(const RunConfig& config) {
  std::string out;
  for (const auto& k : keys()) out += std::string(k.name) + " = " + k.get(config) + "\n";
  return out;
}

std::string config_hash(const RunConfig& config) {
  const auto text = to_text(config);
  const auto crc = crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(text.data()),
                         static_cast<uInt>(text.size()));
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> names;
  for (const auto& k : keys()) names.emplace_back(k.name);
  return names;
}

AugmentationPolicy parse_augmentation(std::string_view text) {
  text = trim(text);
  if (text == "standard") return AugmentationPolicy::standard();
  AugmentationPolicy policy;
  if (text == "none" || text.empty()) return policy;
  for (auto item : split(text, ',')) {
    const auto colon = item.find(':');
    const auto name = trim(item.substr(0, colon));
    const auto arg = colon == std::string_view::npos ? std::string_view{} : trim(item.substr(colon + 1));
    if (arg.empty()) throw ConfigError("augmentation '" + std::string(name) + "' needs a parameter");
    if (name == "hflip") {
      policy.transforms.emplace_back(RandomHorizontalFlip{parse_real(arg)});
    } else if (name == "translate") {
      policy.transforms.emplace_back(RandomTranslation{parse_int(arg)});
    } else if (name == "jitter") {
      const auto parts = split(arg, '/');
      if (parts.size() == 1) {
        const double s = parse_real(parts[0]);
        policy.transforms.emplace_back(ColorJitter{s, s, s});
      } else if (parts.size() == 3) {
        policy.transforms.emplace_back(ColorJitter{parse_real(parts[0]), parse_real(parts[1]), parse_real(parts[2])});
      } else {
        throw ConfigError("jitter takes one strength or brightness/contrast/saturation");
      }
    } else if (name == "grayscale") {
      policy.transforms.emplace_back(RandomGrayscale{parse_real(arg)});
    } else if (name == "rotate") {
      policy.transforms.emplace_back(RandomRotation{parse_real(arg)});
    } else {
      throw ConfigError("unknown augmentation '" + std::string(name) + "'");
    }
  }
  return policy;
}

std::string to_string(const AugmentationPolicy& policy) {
  if (policy.transforms.empty()) return "none";
  std::vector<std::string> items;
  for (const auto& t : policy.transforms) {
    if (auto* f = std::get_if<RandomHorizontalFlip>(&t)) items.push_back("hflip:" + format_real(f->probability));
    if (auto* r = std::get_if<RandomTranslation>(&t)) items.push_back("translate:" + std::to_string(r->max_shift));
    if (auto* j = std::get_if<ColorJitter>(&t))
      items.push_back("jitter:" + format_real(j->brightness) + "/" + format_real(j->contrast) + "/" +
                      format_real(j->saturation));
    if (auto* g = std::get_if<RandomGrayscale>(&t)) items.push_back("grayscale:" + format_real(g->probability));
    if (auto* r = std::get_if<RandomRotation>(&t)) items.push_back("rotate:" + format_real(r->max_degrees));
  }
  return join(items, [](const std::string& s) { return s; });
}

}  // namespace crqat
