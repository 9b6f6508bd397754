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

#include "crqat/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "crqat/errors.hpp"

namespace crqat {

namespace {

constexpr const char* kMagic = "crqat-checkpoint";
constexpr int kVersion = 1;

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

void append_floats(std::string& blob, std::span<const float> values) {
  for (float f : values) {
    const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(f));
    char raw[4];
    std::memcpy(raw, &bits, 4);
    blob.append(raw, 4);
  }
}

std::vector<float> read_floats(const std::string& blob, std::size_t offset, std::size_t count) {
  std::vector<float> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, blob.data() + 4 * (offset + i), 4);
    out[i] = std::bit_cast<float>(to_le(bits));
  }
  return out;
}

std::uint32_t crc_of(const std::string& bytes) {
  return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(bytes.data()),
                                          static_cast<uInt>(bytes.size())));
}

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

std::string shape_text(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) out += (i ? "x" : "") + std::to_string(shape[i]);
  return out;
}

void require_token(const std::string& name, const char* what) {
  if (name.empty() || name.find_first_of(" \t\n") != std::string::npos)
    throw IoError(std::string("checkpoint: ") + what + " name '" + name + "' cannot be stored");
}

struct ParamEntry {
  std::string name;
  std::size_t offset = 0, count = 0;
  std::string shape;
};

struct SiteEntry {
  std::string name, kind, axis;
  int bits = 0;
  bool calibrated = false;
  std::string offset;
  std::size_t groups = 0;
  std::vector<std::int32_t> zero_points;
};

[[noreturn]] void malformed(const std::filesystem::path& file, std::size_t line, const std::string& why) {
  throw IoError("checkpoint manifest " + file.string() + ":" + std::to_string(line) + ": " + why);
}

}  // namespace

void save_checkpoint(const ModelState& model, const std::filesystem::path& dir, const CheckpointInfo& info) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("checkpoint: cannot create " + dir.string() + ": " + ec.message());
  require_token(model.arch, "architecture");
  require_token(info.config_hash.empty() ? "-" : info.config_hash, "config hash");

  std::ostringstream m;
  m << kMagic << ' ' << kVersion << '\n'
    << "arch " << model.arch << '\n'
    << "num_classes " << model.num_classes << '\n'
    << "wbits " << model.wbits << '\n'
    << "abits " << model.abits << '\n'
    << "input " << model.options.in_channels << ' ' << model.options.height << ' ' << model.options.width << '\n'
    << "resnet_width_divisor " << model.options.resnet_width_divisor << '\n'
    << "role " << (model.role == Role::kTeacher ? "teacher" : "student") << '\n'
    << "quantization " << (model.quantization_enabled ? 1 : 0) << '\n'
    << "epoch " << info.epoch << '\n'
    << "config_hash " << (info.config_hash.empty() ? "-" : info.config_hash) << '\n';

  std::string blob;
  std::size_t offset = 0;
  for (const auto& p : model.params) {
    require_token(p.name, "parameter");
    m << "param " << p.name << ' ' << offset << ' ' << p.value.numel() << ' ' << shape_text(p.value.shape()) << '\n';
    append_floats(blob, p.value.data());
    offset += p.value.numel();
  }
  for (const auto& s : model.sites) {
    require_token(s.name, "site");
    m << "site " << s.name << ' ' << (s.kind == SiteKind::kWeight ? "weight" : "activation") << ' ' << s.bits << ' '
      << (s.spec.axis ? std::to_string(*s.spec.axis) : "-") << ' ' << (s.calibrated ? 1 : 0) << ' ';
    if (s.step.defined()) {
      m << offset << ' ' << s.step.numel() << ' ';
      append_floats(blob, s.step.data());
      offset += s.step.numel();
    } else {
      m << "- 0 ";
    }
    for (std::size_t i = 0; i < s.spec.zero_point.size(); ++i) m << (i ? "," : "") << s.spec.zero_point[i];
    m << '\n';
  }
  m << "blob_bytes " << blob.size() << '\n' << "blob_crc32 " << hex32(crc_of(blob)) << '\n';

  std::ofstream blob_out(dir / kBlobFile, std::ios::binary | std::ios::trunc);
  blob_out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!blob_out) throw IoError("checkpoint: cannot write " + (dir / kBlobFile).string());
  std::ofstream manifest_out(dir / kManifestFile, std::ios::binary | std::ios::trunc);
  manifest_out << m.str();
  if (!manifest_out) throw IoError("checkpoint: cannot write " + (dir / kManifestFile).string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir, const std::optional<std::string>& expected_config_hash) {
  const auto manifest_file = dir / kManifestFile;
  std::ifstream in(manifest_file, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + manifest_file.string());

  std::map<std::string, std::string> header;
  std::vector<ParamEntry> params;
  std::vector<SiteEntry> sites;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (line_no == 1) {
      int version = 0;
      ls >> version;
      if (key != kMagic) malformed(manifest_file, line_no, "not a checkpoint manifest");
      if (version != kVersion) malformed(manifest_file, line_no, "unsupported version " + std::to_string(version));
      continue;
    }
    if (key == "param") {
      ParamEntry e;
      if (!(ls >> e.name >> e.offset >> e.count >> e.shape)) malformed(manifest_file, line_no, "bad param entry");
      params.push_back(std::move(e));
    } else if (key == "site") {
      SiteEntry e;
      std::string calibrated, zps;
      if (!(ls >> e.name >> e.kind >> e.bits >> e.axis >> calibrated >> e.offset >> e.groups >> zps))
        malformed(manifest_file, line_no, "bad site entry");
      e.calibrated = calibrated == "1";
      std::istringstream zs(zps);
      for (std::string z; std::getline(zs, z, ',');) {
        try {
          e.zero_points.push_back(static_cast<std::int32_t>(std::stol(z)));
        } catch (const std::exception&) {
          malformed(manifest_file, line_no, "bad zero point '" + z + "'");
        }
      }
      sites.push_back(std::move(e));
    } else {
      std::string rest;
      std::getline(ls >> std::ws, rest);
      if (!header.emplace(key, rest).second) malformed(manifest_file, line_no, "repeated key '" + key + "'");
    }
  }
  if (line_no == 0) throw IoError("checkpoint: empty manifest " + manifest_file.string());

  auto field = [&](const std::string& key) -> const std::string& {
    auto it = header.find(key);
    if (it == header.end()) throw IoError("checkpoint manifest " + manifest_file.string() + ": missing '" + key + "'");
    return it->second;
  };
  auto number = [&](const std::string& key) -> long long {
    try {
      return std::stoll(field(key));
    } catch (const std::invalid_argument&) {
      throw IoError("checkpoint manifest " + manifest_file.string() + ": '" + key + "' is not a number");
    }
  };

  LoadedCheckpoint out;
  out.info.epoch = static_cast<int>(number("epoch"));
  out.info.config_hash = field("config_hash") == "-" ? "" : field("config_hash");
  if (expected_config_hash && *expected_config_hash != out.info.config_hash)
    throw ChecksumError("checkpoint " + dir.string() + ": config hash " + out.info.config_hash + " does not match " +
                        *expected_config_hash);

  const auto blob_file = dir / kBlobFile;
  std::ifstream bin(blob_file, std::ios::binary);
  if (!bin) throw IoError("checkpoint: cannot open " + blob_file.string());
  std::string blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  const auto expected_bytes = static_cast<std::size_t>(number("blob_bytes"));
  if (blob.size() < expected_bytes)
    throw IoError("checkpoint: truncated blob " + blob_file.string() + " at byte offset " + std::to_string(blob.size()) +
                  " (expected " + std::to_string(expected_bytes) + " bytes)");
  if (blob.size() > expected_bytes)
    throw IoError("checkpoint: blob " + blob_file.string() + " has " + std::to_string(blob.size() - expected_bytes) +
                  " trailing bytes");
  if (hex32(crc_of(blob)) != field("blob_crc32"))
    throw ChecksumError("checkpoint: blob " + blob_file.string() + " fails its CRC-32 check");

  ModelOptions options;
  {
    std::istringstream is(field("input"));
    if (!(is >> options.in_channels >> options.height >> options.width))
      throw IoError("checkpoint manifest " + manifest_file.string() + ": bad input extents");
  }
  options.resnet_width_divisor = static_cast<std::size_t>(number("resnet_width_divisor"));
  ModelState& m = out.model;
  m = build_model(field("arch"), static_cast<std::size_t>(number("num_classes")), static_cast<int>(number("wbits")),
                  static_cast<int>(number("abits")), 0, options);
  m.quantization_enabled = number("quantization") != 0;
  const bool teacher = field("role") == "teacher";
  if (!teacher && field("role") != "student")
    throw IoError("checkpoint manifest " + manifest_file.string() + ": unknown role '" + field("role") + "'");
  m.role = teacher ? Role::kTeacher : Role::kStudent;

  auto check_range = [&](std::size_t offset, std::size_t count, const std::string& what) {
    if ((offset + count) * 4 > blob.size())
      throw IoError("checkpoint: " + what + " extends past the end of the blob");
  };
  if (params.size() != m.params.size())
    throw IoError("checkpoint: manifest lists " + std::to_string(params.size()) + " parameters, architecture has " +
                  std::to_string(m.params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = m.params[i];
    const auto& e = params[i];
    if (e.name != p.name) throw IoError("checkpoint: parameter " + std::to_string(i) + " is '" + e.name + "', expected '" + p.name + "'");
    if (e.shape != shape_text(p.value.shape()) || e.count != p.value.numel())
      throw IoError("checkpoint: parameter '" + e.name + "' has shape " + e.shape + ", expected " +
                    shape_text(p.value.shape()));
    check_range(e.offset, e.count, "parameter '" + e.name + "'");
    p.value = Tensor(p.value.shape(), read_floats(blob, e.offset, e.count), !teacher);
  }
  if (sites.size() != m.sites.size())
    throw IoError("checkpoint: manifest lists " + std::to_string(sites.size()) + " quantizer sites, architecture has " +
                  std::to_string(m.sites.size()));
  for (std::size_t i = 0; i < sites.size(); ++i) {
    auto& s = m.sites[i];
    const auto& e = sites[i];
    if (e.name != s.name || e.bits != s.bits)
      throw IoError("checkpoint: site " + std::to_string(i) + " is '" + e.name + "' (" + std::to_string(e.bits) +
                    " bits), expected '" + s.name + "' (" + std::to_string(s.bits) + " bits)");
    s.calibrated = e.calibrated;
    s.spec.bits = e.bits;
    s.spec.axis = e.axis == "-" ? std::nullopt : std::optional<std::size_t>(std::stoul(e.axis));
    s.spec.zero_point = e.zero_points;
    if (e.offset == "-") {
      s.step = Tensor();
      continue;
    }
    const auto offset = static_cast<std::size_t>(std::stoull(e.offset));
    check_range(offset, e.groups, "site '" + e.name + "'");
    auto steps = read_floats(blob, offset, e.groups);
    s.spec.step = steps;
    if (e.zero_points.size() != e.groups)
      throw IoError("checkpoint: site '" + e.name + "' has " + std::to_string(e.zero_points.size()) +
                    " zero points for " + std::to_string(e.groups) + " step sizes");
    s.step = Tensor({e.groups}, std::move(steps), !teacher && s.calibrated);
    try {
      s.spec.validate();
    } catch (const SpecError& err) {
      throw IoError("checkpoint: site '" + e.name + "': " + err.what());
    }
  }
  if (teacher) {
    for (auto& p : m.params) m.ema_params.emplace_back(p.value.data().begin(), p.value.data().end());
    for (auto& s : m.sites)
      m.ema_steps.emplace_back(s.step.defined() ? std::vector<double>(s.step.data().begin(), s.step.data().end())
                                                : std::vector<double>{});
  }
  return out;
}

}  // namespace crqat
