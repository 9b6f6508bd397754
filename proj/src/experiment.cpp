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

#include "crqat/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "crqat/checkpoint.hpp"
#include "crqat/errors.hpp"
#include "crqat/metrics.hpp"
#include "crqat/trainer.hpp"

namespace crqat {

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::ofstream open_out(const std::filesystem::path& file) {
  std::error_code ec;
  std::filesystem::create_directories(file.parent_path(), ec);
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  return out;
}

std::string run_tag(std::uint64_t seed, Mode mode) { return to_string(mode) + "_seed" + std::to_string(seed); }

void write_steps(const std::filesystem::path& file, std::span<const StepRecord> records) {
  auto out = open_out(file);
  out << "iteration,epoch,lambda,ce,cr,total,lr\n";
  for (const auto& r : records)
    out << r.iteration << ',' << r.epoch << ',' << fmt(r.lambda) << ',' << fmt(r.ce) << ',' << fmt(r.cr) << ','
        << fmt(r.total) << ',' << fmt(r.lr) << '\n';
}

void write_traces(const std::filesystem::path& file, const OscillationTracker& student,
                  const OscillationTracker& teacher, std::size_t every) {
  auto out = open_out(file);
  out << "# levels sampled every " << every << " iterations\n";
  out << "role,site,channel,index,oscillations,levels\n";
  auto rows = [&](const char* role, const OscillationTracker& t) {
    for (const auto& tr : t.traces()) {
      out << role << ',' << tr.site << ',' << tr.channel << ',' << tr.index << ','
          << (tr.levels.size() >= 2 ? oscillation_count(tr) : 0) << ',';
      for (std::size_t i = 0; i < tr.levels.size(); ++i) out << (i ? " " : "") << tr.levels[i];
      out << '\n';
    }
  };
  rows("student", student);
  rows("teacher", teacher);
}

void write_entropy(const std::filesystem::path& file, const EntropyReport& student, const EntropyReport& teacher) {
  auto out = open_out(file);
  out << "role,layer,channel,entropy,degenerate\n";
  auto rows = [&](const char* role, const EntropyReport& r) {
    for (const auto& k : r.kernels)
      out << role << ',' << k.layer << ',' << k.channel << ',' << fmt(k.entropy) << ',' << (k.degenerate ? 1 : 0)
          << '\n';
  };
  rows("student", student);
  rows("teacher", teacher);
}

nlohmann::ordered_json stat_json(const Stat& s) { return {{"mean", s.mean}, {"std", s.std}}; }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

Stat mean_std(std::span<const double> values) {
  Stat s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

DatasetPair load_experiment_data(const RunConfig& config) {
  if (config.dataset == "cifar10") {
    auto data = load_cifar10(config.data_dir, config.train_size, config.test_size);
    if (data.train.size() < config.train_size || data.test.size() < config.test_size)
      throw ConfigError("dataset: CIFAR-10 in " + config.data_dir + " holds fewer samples than requested");
    return data;
  }
  return make_synthetic_pair(config.train_size, config.test_size, config.num_classes, config.data_seed);
}

SeedSetup prepare_seed(const RunConfig& config, const DatasetPair& data, std::uint64_t seed) {
  SeedSetup setup{split_labeled(data.train, config.labeled_fraction, seed), {}};
  const auto calib =
      sample_calibration(setup.split.labeled, std::min(config.calibration_size, setup.split.labeled.size()), seed);
  ModelOptions options;
  options.in_channels = data.train.channels();
  options.height = data.train.height();
  options.width = data.train.width();
  options.resnet_width_divisor = config.resnet_width_divisor;
  setup.initial = build_model(config.arch, config.num_classes, config.wbits, config.abits, seed, options);
  std::vector<std::size_t> all(calib.data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  calibrate_model(setup.initial, calib.data.normalized_batch(all));
  return setup;
}

RunPaths run_paths(const std::filesystem::path& dir, std::uint64_t seed, Mode mode) {
  const auto tag = run_tag(seed, mode);
  return {dir / "steps" / (tag + ".csv"), dir / "traces" / (tag + ".csv"), dir / "entropy" / (tag + ".csv"),
          dir / "checkpoints" / tag};
}

RunResult run_single(const RunConfig& config, const DatasetPair& data, const SeedSetup& setup, std::uint64_t seed,
                     Mode mode, std::ostream* log) {
  TrainConfig tc = config.train;
  tc.seed = seed;
  tc.augmentation.seed = seed;
  if (mode != Mode::kCr) tc.cr_strength = 0.0;
  ModelState student = setup.initial.clone();
  if (mode == Mode::kFp) student.quantization_enabled = false;

  OscillationTracker student_trace(student), teacher_trace(student);
  TrainHooks hooks;
  hooks.after_iteration = [&](const StepRecord& rec, const ModelState& s, const ModelState& t) {
    if (rec.iteration % config.trace_every != 0) return;
    student_trace.record(s);
    teacher_trace.record(t);
  };
  if (log) *log << "[" << run_tag(seed, mode) << "] training " << tc.epochs << " epochs" << std::endl;
  TrainData td{setup.split.labeled, setup.split.unlabeled_view()};
  TrainResult trained = train(student, tc, td, hooks);

  RunResult r;
  r.seed = seed;
  r.mode = mode;
  r.iterations = trained.records.size();
  r.diverged = trained.diverged;
  r.diagnostic = trained.diagnostic;
  r.student_accuracy = evaluate_accuracy(trained.student, data.test, config.eval_samples, seed);
  r.teacher_accuracy = evaluate_accuracy(trained.teacher, data.test, config.eval_samples, seed);
  r.student_oscillations = student_trace.total_oscillations();
  r.teacher_oscillations = teacher_trace.total_oscillations();
  const auto student_entropy = weight_entropy(trained.student);
  const auto teacher_entropy = weight_entropy(trained.teacher);
  r.student_entropy = student_entropy.total;
  r.teacher_entropy = teacher_entropy.total;

  const auto paths = run_paths(config.out_dir, seed, mode);
  write_steps(paths.steps, trained.records);
  write_traces(paths.traces, student_trace, teacher_trace, config.trace_every);
  write_entropy(paths.entropy, student_entropy, teacher_entropy);
  if (config.save_checkpoints) {
    const int epoch = trained.records.empty() ? 0 : trained.records.back().epoch + 1;
    const CheckpointInfo info{epoch, config_hash(config)};
    save_checkpoint(trained.student, paths.checkpoint / "student", info);
    save_checkpoint(trained.teacher, paths.checkpoint / "teacher", info);
  }
  if (log) {
    *log << "[" << run_tag(seed, mode) << "] student " << r.student_accuracy << "%, teacher " << r.teacher_accuracy
         << "%";
    if (r.diverged) *log << " (diverged: " << r.diagnostic << ")";
    *log << std::endl;
  }
  return r;
}

ExperimentReport run_experiment(const RunConfig& config, std::ostream* log) {
  config.validate();
  const std::filesystem::path dir(config.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  open_out(dir / "config.txt") << to_text(config);

  const auto data = load_experiment_data(config);
  std::vector<RunResult> runs;
  for (const auto seed : config.seeds) {
    const auto setup = prepare_seed(config, data, seed);
    for (const auto mode : config.modes) runs.push_back(run_single(config, data, setup, seed, mode, log));
  }
  auto report = summarize(config_hash(config), std::move(runs));
  write_results_csv(dir / "results.csv", report.runs);
  open_out(dir / "summary.json") << summary_json(config, report).dump(2) << '\n';
  return report;
}

ExperimentReport summarize(const std::string& config_hash, std::vector<RunResult> runs) {
  ExperimentReport report;
  report.config_hash = config_hash;
  report.runs = std::move(runs);
  for (const auto mode : {Mode::kCr, Mode::kBaseline, Mode::kFp}) {
    std::vector<double> sa, ta, so, to, se, te;
    ModeSummary m;
    m.mode = mode;
    for (const auto& r : report.runs) {
      if (r.mode != mode) continue;
      ++m.runs;
      if (r.diverged) ++m.diverged;
      sa.push_back(r.student_accuracy);
      ta.push_back(r.teacher_accuracy);
      so.push_back(static_cast<double>(r.student_oscillations));
      to.push_back(static_cast<double>(r.teacher_oscillations));
      se.push_back(r.student_entropy);
      te.push_back(r.teacher_entropy);
    }
    if (m.runs == 0) continue;
    m.student_accuracy = mean_std(sa);
    m.teacher_accuracy = mean_std(ta);
    m.student_oscillations = mean_std(so);
    m.teacher_oscillations = mean_std(to);
    m.student_entropy = mean_std(se);
    m.teacher_entropy = mean_std(te);
    report.modes.push_back(m);
  }

  std::map<std::uint64_t, const RunResult*> cr, base;
  for (const auto& r : report.runs) {
    if (r.mode == Mode::kCr) cr[r.seed] = &r;
    if (r.mode == Mode::kBaseline) base[r.seed] = &r;
  }
  Comparison cmp;
  std::vector<double> gains;
  for (const auto& [seed, c] : cr) {
    auto it = base.find(seed);
    if (it == base.end()) continue;
    const RunResult* b = it->second;
    SeedComparison s;
    s.seed = seed;
    s.accuracy_gain = c->teacher_accuracy - b->student_accuracy;
    s.cr_teacher_oscillations = c->teacher_oscillations;
    s.baseline_student_oscillations = b->student_oscillations;
    s.cr_teacher_entropy = c->teacher_entropy;
    s.baseline_student_entropy = b->student_entropy;
    gains.push_back(s.accuracy_gain);
    if (s.accuracy_gain > 0.0) ++cmp.accuracy_positive;
    if (s.cr_teacher_oscillations < s.baseline_student_oscillations) ++cmp.oscillation_lower;
    if (s.cr_teacher_entropy >= s.baseline_student_entropy) ++cmp.entropy_not_lower;
    cmp.seeds.push_back(s);
  }
  if (!cmp.seeds.empty()) {
    cmp.mean_accuracy_gain = mean_std(gains).mean;
    report.comparison = std::move(cmp);
  }
  return report;
}

nlohmann::ordered_json summary_json(const RunConfig& config, const ExperimentReport& report) {
  nlohmann::ordered_json j;
  j["config_hash"] = report.config_hash;
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  std::istringstream lines(to_text(config));
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find(" = ");
    cfg[line.substr(0, eq)] = line.substr(eq + 3);
  }
  j["config"] = cfg;

  nlohmann::ordered_json modes = nlohmann::ordered_json::object();
  for (const auto& m : report.modes) {
    modes[to_string(m.mode)] = {{"runs", m.runs},
                                {"diverged", m.diverged},
                                {"student_accuracy", stat_json(m.student_accuracy)},
                                {"teacher_accuracy", stat_json(m.teacher_accuracy)},
                                {"student_oscillations", stat_json(m.student_oscillations)},
                                {"teacher_oscillations", stat_json(m.teacher_oscillations)},
                                {"student_entropy", stat_json(m.student_entropy)},
                                {"teacher_entropy", stat_json(m.teacher_entropy)}};
  }
  j["modes"] = modes;

  if (report.comparison) {
    const auto& c = *report.comparison;
    nlohmann::ordered_json seeds = nlohmann::ordered_json::array();
    for (const auto& s : c.seeds)
      seeds.push_back({{"seed", s.seed},
                       {"accuracy_gain", s.accuracy_gain},
                       {"cr_teacher_oscillations", s.cr_teacher_oscillations},
                       {"baseline_student_oscillations", s.baseline_student_oscillations},
                       {"cr_teacher_entropy", s.cr_teacher_entropy},
                       {"baseline_student_entropy", s.baseline_student_entropy}});
    j["comparison"] = {{"reference", "cr teacher vs baseline student, paired by seed"},
                       {"pairs", c.seeds.size()},
                       {"mean_accuracy_gain", c.mean_accuracy_gain},
                       {"accuracy_positive_seeds", c.accuracy_positive},
                       {"oscillation_lower_seeds", c.oscillation_lower},
                       {"entropy_not_lower_seeds", c.entropy_not_lower},
                       {"seeds", seeds}};
  }

  nlohmann::ordered_json runs = nlohmann::ordered_json::array();
  for (const auto& r : report.runs)
    runs.push_back({{"seed", r.seed},
                    {"mode", to_string(r.mode)},
                    {"student_accuracy", r.student_accuracy},
                    {"teacher_accuracy", r.teacher_accuracy},
                    {"student_oscillations", r.student_oscillations},
                    {"teacher_oscillations", r.teacher_oscillations},
                    {"student_entropy", r.student_entropy},
                    {"teacher_entropy", r.teacher_entropy},
                    {"iterations", r.iterations},
                    {"diverged", r.diverged},
                    {"diagnostic", r.diagnostic}});
  j["runs"] = runs;
  return j;
}

void write_results_csv(const std::filesystem::path& file, std::span<const RunResult> runs) {
  auto out = open_out(file);
  out << "seed,mode,student_accuracy,teacher_accuracy,student_oscillations,teacher_oscillations,student_entropy,"
         "teacher_entropy,iterations,diverged\n";
  for (const auto& r : runs)
    out << r.seed << ',' << to_string(r.mode) << ',' << fmt(r.student_accuracy) << ',' << fmt(r.teacher_accuracy)
        << ',' << r.student_oscillations << ',' << r.teacher_oscillations << ',' << fmt(r.student_entropy) << ','
        << fmt(r.teacher_entropy) << ',' << r.iterations << ',' << (r.diverged ? 1 : 0) << '\n';
}

std::vector<RunResult> read_results_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open results file " + file.string());
  std::string line;
  std::getline(in, line);
  std::vector<RunResult> runs;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 10) throw IoError(file.string() + ":" + std::to_string(line_no) + ": expected 10 columns");
    try {
      RunResult r;
      r.seed = std::stoull(cells[0]);
      r.mode = parse_mode(cells[1]);
      r.student_accuracy = std::stod(cells[2]);
      r.teacher_accuracy = std::stod(cells[3]);
      r.student_oscillations = std::stoull(cells[4]);
      r.teacher_oscillations = std::stoull(cells[5]);
      r.student_entropy = std::stod(cells[6]);
      r.teacher_entropy = std::stod(cells[7]);
      r.iterations = std::stoull(cells[8]);
      r.diverged = cells[9] == "1";
      runs.push_back(r);
    } catch (const std::logic_error&) {
      throw IoError(file.string() + ":" + std::to_string(line_no) + ": malformed row");
    } catch (const ConfigError& e) {
      throw IoError(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return runs;
}

std::vector<TraceCount> count_trace_oscillations(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open trace file " + file.string());
  std::vector<TraceCount> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#' || line.rfind("role,", 0) == 0) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 6) throw IoError(file.string() + ":" + std::to_string(line_no) + ": expected 6 columns");
    TraceCount t;
    t.role = cells[0];
    t.site = cells[1];
    std::vector<std::int32_t> levels;
    try {
      t.channel = std::stoull(cells[2]);
      t.index = std::stoull(cells[3]);
      std::istringstream ls(cells[5]);
      for (long v; ls >> v;) levels.push_back(static_cast<std::int32_t>(v));
    } catch (const std::logic_error&) {
      throw IoError(file.string() + ":" + std::to_string(line_no) + ": malformed row");
    }
    t.oscillations = levels.size() >= 2 ? oscillation_count(levels) : 0;
    out.push_back(t);
  }
  return out;
}

}  // namespace crqat
