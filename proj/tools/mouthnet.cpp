// Command-line driver: prepare, train, grid, eval.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mouthnet/experiment.hpp"
#include "mouthnet/kernels.hpp"

namespace fs = std::filesystem;
using namespace mouthnet;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config, "Experiment INI file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", flags.seed, "Override [train] seed");
}

ExperimentConfig load(const CommonFlags& flags, bool require_experiment) {
  auto cfg = load_config(flags.config, require_experiment);
  if (flags.seed) cfg.train.seed = *flags.seed;
  kernels::set_num_threads(static_cast<int>(cfg.threads));
  kernels::set_mode(cfg.threads > 1 ? kernels::Mode::parallel : kernels::Mode::serial);
  return cfg;
}

int cmd_prepare(const CommonFlags& flags) {
  auto cfg = load(flags, false);
  if (!flags.out.empty()) cfg.prepared_dir = fs::absolute(flags.out);
  std::vector<std::string> missing;
  if (cfg.raw_manifest.empty()) missing.push_back("[data] raw_manifest is required");
  if (cfg.cropboxes.empty()) missing.push_back("[data] cropboxes is required");
  if (cfg.prepared_dir.empty()) missing.push_back("[data] prepared_dir is required (or --out)");
  if (!missing.empty()) throw ConfigError(std::move(missing));
  const auto result = prepare_dataset(cfg.prepare_options());
  if (result.skipped)
    fmt::print("prepare: {} is already complete, nothing to do\n", cfg.prepared_dir.string());
  else
    fmt::print("prepare: wrote {} clips and {}\n", result.clips_written, result.manifest_path.string());
  return 0;
}

int cmd_train(const CommonFlags& flags) {
  auto cfg = load(flags, true);
  if (!flags.out.empty()) cfg.run_dir = fs::absolute(flags.out);
  const auto result = run_training(cfg, [](const EpochRecord& rec, ModelAssembly<float>&) {
    std::string line = fmt::format("epoch {}", rec.epoch);
    for (const auto& [k, v] : rec.train_loss) line += fmt::format("  loss.{} {:.4f}", k, v);
    for (const auto& [k, v] : rec.val_acc) line += fmt::format("  val.{} {:.2f}", k, v);
    std::fprintf(stderr, "%s\n", line.c_str());
    return false;
  });
  fmt::print("train: {} epochs, best {} val accuracy {:.2f} at epoch {}, outputs in {}\n", result.history.size(),
             result.target_key, result.best.best_val, result.best.epoch, cfg.run_dir.string());
  return 0;
}

std::vector<fs::path> grid_run_dirs(const ExperimentConfig& cfg) {
  std::vector<fs::path> dirs;
  for (const auto& run : grid_runs()) {
    const auto dir = grid_run_config(cfg, run).run_dir;
    if (fs::exists(dir)) dirs.push_back(dir);
  }
  return dirs;
}

int cmd_grid(const CommonFlags& flags, bool resume) {
  auto cfg = load(flags, false);
  if (!flags.out.empty()) cfg.run_dir = fs::absolute(flags.out);
  const auto progress = run_grid(cfg, resume);
  fmt::print("grid: trained {} runs, skipped {} complete runs\n", progress.trained.size(), progress.skipped.size());
  const auto out = run_eval(cfg, grid_run_dirs(cfg), cfg.run_dir);
  fmt::print("{}", out.table);
  return 0;
}

int cmd_eval(const CommonFlags& flags, const std::vector<std::string>& runs) {
  auto cfg = load(flags, false);
  std::vector<fs::path> dirs(runs.begin(), runs.end());
  if (dirs.empty()) dirs = grid_run_dirs(cfg);
  if (dirs.empty()) throw DataError("eval: no run directories given and none found under " + cfg.run_dir.string());
  const fs::path out_dir = flags.out.empty() ? cfg.run_dir : fs::path(flags.out);
  const auto out = run_eval(cfg, dirs, out_dir);
  fmt::print("{}", out.table);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mouthing recognition: data preparation, training and evaluation"};
  app.require_subcommand(1);

  CommonFlags prep_flags, train_flags, grid_flags, eval_flags;
  bool resume = false;
  std::vector<std::string> eval_runs;

  auto* prepare = app.add_subcommand("prepare", "Balance, split, standardise and crop a raw clip corpus");
  add_common(prepare, prep_flags);
  prepare->add_option("--out", prep_flags.out, "Override [data] prepared_dir");

  auto* train = app.add_subcommand("train", "Train one configured run");
  add_common(train, train_flags);
  train->add_option("--out", train_flags.out, "Override [output] run_dir");

  auto* grid = app.add_subcommand("grid", "Train every run of the results table, then evaluate");
  add_common(grid, grid_flags);
  grid->add_option("--out", grid_flags.out, "Override [output] run_dir (grid root)");
  grid->add_flag("--resume", resume, "Skip runs that already completed");

  auto* eval = app.add_subcommand("eval", "Score run directories and render the results table");
  add_common(eval, eval_flags);
  eval->add_option("--out", eval_flags.out, "Directory for results.tsv and table.txt");
  eval->add_option("runs", eval_runs, "Run directories (default: every grid run under [output] run_dir)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*prepare) return cmd_prepare(prep_flags);
    if (*train) return cmd_train(train_flags);
    if (*grid) return cmd_grid(grid_flags, resume);
    if (*eval) return cmd_eval(eval_flags, eval_runs);
  } catch (const ConfigError& e) {
    for (const auto& v : e.violations()) std::cerr << "config error: " << v << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
