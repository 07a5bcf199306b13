#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mouthnet/datapipe.hpp"
#include "mouthnet/report.hpp"
#include "mouthnet/trainer.hpp"

namespace mouthnet {

// INI experiment description. Sections and keys:
//   [data]       manifest, raw_manifest, cropboxes, prepared_dir, per_class,
//                split_ratios, train_per_class, frames, crop_size
//   [model]      conv_channels, gru_hidden, gru_layers
//   [train]      batch_size, lr, beta1, beta2, eps, max_epochs,
//                early_stop_gate, patience, seed, augment, aug_num_ops,
//                aug_magnitude, aug_ops, dann_lambda, source_checkpoint,
//                target_task, threads
//   [experiment] kind, datasets, source, name
//   [perturb]    sigma, seed
//   [output]     run_dir
// Relative paths resolve against the config file's directory.
struct ExperimentConfig {
  std::filesystem::path base_dir;

  std::filesystem::path manifest;
  std::filesystem::path raw_manifest;
  std::filesystem::path cropboxes;
  std::filesystem::path prepared_dir;
  std::size_t per_class = 500;
  std::array<std::size_t, 3> split_ratios{8, 1, 1};
  std::size_t train_per_class = 397;

  TrainConfig train;
  std::optional<DatasetId> source;  // fine-tune source dataset, for naming
  std::string name;
  std::size_t threads = 1;

  double perturb_sigma = 10.0;
  std::uint64_t perturb_seed = 0;

  std::filesystem::path run_dir;

  // Prepared manifest: `manifest` if set, else prepared_dir/manifest.tsv.
  std::filesystem::path manifest_path() const;
  PrepareOptions prepare_options() const;
  RunSpec run_spec() const;
};

// Parses and validates; every problem found is reported in one ConfigError.
// `require_experiment` demands a complete [experiment] section.
ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir,
                              bool require_experiment = true);
ExperimentConfig load_config(const std::filesystem::path& path, bool require_experiment = true);
// Round-trippable INI with absolute paths.
std::string format_config(const ExperimentConfig& cfg);

// Run directory contents.
inline constexpr std::string_view kRunConfig = "config.ini";
inline constexpr std::string_view kBestCheckpoint = "best.mckp";
inline constexpr std::string_view kLastCheckpoint = "last.mckp";
inline constexpr std::string_view kHistoryFile = "history.txt";
inline constexpr std::string_view kTimingsFile = "timings.txt";
inline constexpr std::string_view kRunDone = "run.done";

bool run_complete(const std::filesystem::path& run_dir);

// Loads the configured datasets from the prepared manifest.
std::vector<TaskData> load_tasks(const ExperimentConfig& cfg, const std::vector<DatasetId>& datasets);

// Trains one configured run and writes its directory (cfg.run_dir).
TrainResult run_training(const ExperimentConfig& cfg, const EpochObserver& observer = {});

// Rebuilds a run's model from its saved config and checkpoint.
ModelAssembly<float> load_run_model(const std::filesystem::path& run_dir,
                                    std::string_view checkpoint = kBestCheckpoint);
RunSpec load_run_spec(const std::filesystem::path& run_dir);

// Per-run configuration derived from a grid template: seed is the template
// seed plus stable_hash(slug), output goes to <template run_dir>/<slug>.
ExperimentConfig grid_run_config(const ExperimentConfig& base, const RunSpec& run);

struct GridProgress {
  std::vector<std::string> trained;
  std::vector<std::string> skipped;
};

// Trains every grid run in order. With `resume`, complete runs are skipped.
GridProgress run_grid(const ExperimentConfig& base, bool resume);

struct EvalOutput {
  ResultsMatrix matrix;
  std::string table;
};

// Scores the given run directories on the prepared test sets and a perturbed
// copy of the M test set; writes results.tsv and table.txt to out_dir.
EvalOutput run_eval(const ExperimentConfig& cfg, const std::vector<std::filesystem::path>& run_dirs,
                    const std::filesystem::path& out_dir);

}  // namespace mouthnet
