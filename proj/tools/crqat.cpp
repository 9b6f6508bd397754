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

// crqat command line: train, evaluate, analyze, compare.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "crqat/checkpoint.hpp"
#include "crqat/config.hpp"
#include "crqat/errors.hpp"
#include "crqat/experiment.hpp"
#include "crqat/metrics.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode, out, arch;
  std::optional<int> wbits, abits, epochs;
  std::vector<std::string> set;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "config file (key = value)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "run this seed only");
  cmd->add_option("--mode", o.mode, "run this mode only: cr, baseline or fp");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--arch", o.arch, "tinycnn, resnet18_narrow or mlp");
  cmd->add_option("--wbits", o.wbits, "weight bit-width");
  cmd->add_option("--abits", o.abits, "activation bit-width");
  cmd->add_option("--epochs", o.epochs, "training epochs");
  cmd->add_option("--set", o.set, "extra key=value override, repeatable");
}

crqat::RunConfig resolve(const Overrides& o) {
  crqat::RunConfig c = o.config.empty() ? crqat::RunConfig{} : crqat::load_config(o.config);
  for (const auto& kv : o.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw crqat::ConfigError("--set expects key=value, got '" + kv + "'");
    crqat::set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) c.seeds = {*o.seed};
  if (o.mode) c.modes = {crqat::parse_mode(*o.mode)};
  if (o.out) c.out_dir = *o.out;
  if (o.arch) c.arch = *o.arch;
  if (o.wbits) c.wbits = *o.wbits;
  if (o.abits) c.abits = *o.abits;
  if (o.epochs) c.train.epochs = *o.epochs;
  c.validate();
  return c;
}

void print_report(const crqat::ExperimentReport& r) {
  for (const auto& m : r.modes)
    std::cout << crqat::to_string(m.mode) << ": student " << m.student_accuracy.mean << " +- " << m.student_accuracy.std
              << "%, teacher " << m.teacher_accuracy.mean << " +- " << m.teacher_accuracy.std << "% over " << m.runs
              << " seed(s)\n";
  if (r.comparison) {
    const auto& c = *r.comparison;
    std::cout << "cr teacher - baseline student: " << c.mean_accuracy_gain << " points, positive in "
              << c.accuracy_positive << "/" << c.seeds.size() << " seeds; fewer reversals in " << c.oscillation_lower
              << "/" << c.seeds.size() << "; entropy not lower in " << c.entropy_not_lower << "/" << c.seeds.size()
              << "\n";
  }
}

int run_train(const Overrides& o) {
  const auto cfg = resolve(o);
  const auto report = crqat::run_experiment(cfg, &std::cerr);
  print_report(report);
  std::cout << "wrote " << cfg.out_dir << "/summary.json\n";
  return 0;
}

int run_compare(const Overrides& o, const std::vector<std::string>& from) {
  auto cfg = resolve(o);
  crqat::ExperimentReport report;
  if (from.empty()) {
    if (!o.mode) cfg.modes = {crqat::Mode::kCr, crqat::Mode::kBaseline};
    report = crqat::run_experiment(cfg, &std::cerr);
  } else {
    // Merge the results of separate jobs.
    std::vector<crqat::RunResult> runs;
    for (const auto& dir : from) {
      auto part = crqat::read_results_csv(std::filesystem::path(dir) / "results.csv");
      runs.insert(runs.end(), part.begin(), part.end());
    }
    report = crqat::summarize(crqat::config_hash(cfg), std::move(runs));
    std::filesystem::create_directories(cfg.out_dir);
    crqat::write_results_csv(std::filesystem::path(cfg.out_dir) / "results.csv", report.runs);
    std::ofstream(std::filesystem::path(cfg.out_dir) / "summary.json") << crqat::summary_json(cfg, report).dump(2)
                                                                        << '\n';
  }
  print_report(report);
  return 0;
}

int run_evaluate(const Overrides& o, const std::string& checkpoint, std::size_t samples) {
  const auto cfg = resolve(o);
  const auto loaded = crqat::load_checkpoint(checkpoint);
  const auto data = crqat::load_experiment_data(cfg);
  const std::size_t n = samples ? samples : cfg.eval_samples;
  const double acc = crqat::evaluate_accuracy(loaded.model, data.test, n, cfg.seeds.front());
  std::cout << "{\"checkpoint\": \"" << checkpoint << "\", \"role\": \""
            << (loaded.model.role == crqat::Role::kTeacher ? "teacher" : "student") << "\", \"samples\": " << n
            << ", \"accuracy\": " << acc << "}\n";
  return 0;
}

int run_analyze(const std::string& checkpoint, const std::string& trace, const std::string& out) {
  if (checkpoint.empty() && trace.empty()) throw crqat::UsageError("analyze needs --checkpoint and/or --trace");
  if (!checkpoint.empty()) {
    const auto loaded = crqat::load_checkpoint(checkpoint);
    const auto report = crqat::weight_entropy(loaded.model);
    std::ostream* dst = &std::cout;
    std::ofstream file;
    if (!out.empty()) {
      file.open(out);
      if (!file) throw crqat::IoError("cannot write " + out);
      dst = &file;
    }
    *dst << "layer,channel,entropy,degenerate\n";
    for (const auto& k : report.kernels)
      *dst << k.layer << ',' << k.channel << ',' << k.entropy << ',' << (k.degenerate ? 1 : 0) << '\n';
    std::cout << "total entropy " << report.total << " bits over " << report.kernels.size() << " kernels ("
              << report.bins << " bins)\n";
  }
  if (!trace.empty()) {
    std::size_t student = 0, teacher = 0;
    for (const auto& t : crqat::count_trace_oscillations(trace)) (t.role == "teacher" ? teacher : student) += t.oscillations;
    std::cout << "oscillations: student " << student << ", teacher " << teacher << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantization-aware training with consistency regularization"};
  app.require_subcommand(1);

  Overrides train_o, eval_o, cmp_o;
  auto* train = app.add_subcommand("train", "run every configured seed and mode");
  add_common(train, train_o);

  auto* evaluate = app.add_subcommand("evaluate", "test accuracy of a checkpoint");
  add_common(evaluate, eval_o);
  std::string eval_ckpt;
  std::size_t eval_samples = 0;
  evaluate->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
  evaluate->add_option("--samples", eval_samples, "test samples (default eval_samples)");

  auto* analyze = app.add_subcommand("analyze", "weight entropy of a checkpoint, reversals of a trace file");
  std::string an_ckpt, an_trace, an_out;
  analyze->add_option("--checkpoint", an_ckpt, "checkpoint directory");
  analyze->add_option("--trace", an_trace, "trace CSV written by train");
  analyze->add_option("--out", an_out, "per-kernel entropy CSV");

  auto* compare = app.add_subcommand("compare", "cr against baseline over the configured seeds");
  add_common(compare, cmp_o);
  std::vector<std::string> from;
  compare->add_option("--from", from, "run directories whose results.csv to merge instead of training");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return run_train(train_o);
    if (*evaluate) return run_evaluate(eval_o, eval_ckpt, eval_samples);
    if (*analyze) return run_analyze(an_ckpt, an_trace, an_out);
    if (*compare) return run_compare(cmp_o, from);
  } catch (const crqat::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const crqat::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
