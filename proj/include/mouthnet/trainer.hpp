#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mouthnet/augment.hpp"
#include "mouthnet/checkpoint.hpp"
#include "mouthnet/datapipe.hpp"
#include "mouthnet/models.hpp"
#include "mouthnet/optim.hpp"
#include "mouthnet/rng.hpp"

namespace mouthnet {

enum class TrainKind { baseline, finetune, dann, mtl };

std::string to_string(TrainKind kind);
TrainKind parse_train_kind(std::string_view text);
ModelKind model_kind(TrainKind kind);

// Raised by TrainConfig::validate with one line per violation.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

// Raised when a loss turns non-finite.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StopRule {
  std::size_t max_epochs = 1500;
  std::size_t early_stop_gate = 1000;
  std::size_t patience = 100;
};

// 1-based epoch of the first maximum; 0 for an empty trace.
std::size_t best_epoch(std::span<const double> target_acc);

// target_acc holds one validation accuracy per finished epoch. True once the
// cap is reached, or past the gate when the best epoch lies more than
// `patience` epochs back.
bool should_stop(std::span<const double> target_acc, const StopRule& rule);

struct TrainConfig {
  TrainKind kind = TrainKind::baseline;
  std::vector<DatasetId> datasets;
  std::size_t batch_size = 64;
  AdamHyper adam;
  StopRule stop;
  std::uint64_t seed = 0;
  bool augment = true;
  AugPolicy aug = AugPolicy::create(2, 9);
  double noise_sigma = 10.0;
  float dann_lambda = 1.0f;
  std::filesystem::path source_checkpoint;
  std::optional<DatasetId> target_task;
  // Architecture; num_classes is taken from the data at train time.
  BaselineSpec model;

  // Explicit target, else M when present, else the first dataset.
  DatasetId resolved_target() const;
  std::vector<std::string> violations() const;
  void validate() const;
};

// Head that scores a dataset's classes in a model of the given kind.
std::string class_head(TrainKind kind, DatasetId dataset);

// Seeded permutation of one task's training set, one pass at a time. Pass p
// is shuffled with the substream "shuffle/<task>/<p>".
class EpochStream {
 public:
  EpochStream(std::size_t size, const Rng& root, std::string task);

  // Up to n indices from the current pass; empty once it is exhausted.
  std::vector<std::size_t> take(std::size_t n);
  // Exactly n indices, starting further passes as needed.
  std::vector<std::size_t> take_cyclic(std::size_t n);
  void next_pass();
  bool exhausted() const { return cursor_ >= order_.size(); }
  std::size_t pass() const { return pass_; }
  std::size_t size() const { return size_; }

 private:
  std::size_t size_;
  Rng root_;
  std::string task_;
  std::size_t pass_ = 0;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

struct TaskBatch {
  std::string head;
  std::vector<const Example*> examples;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> domains;  // DANN only: 0 for the first dataset, 1 for the second
};

struct BatchBundle {
  std::vector<TaskBatch> parts;
};

// tasks[0] and streams[0] belong to the target task, whose stream defines the
// epoch: nullopt once it is exhausted. baseline/finetune: one part of up to
// batch_size samples. dann: one part, half from each dataset with domain
// labels. mtl: one batch_size part per task, auxiliary streams recycling.
std::optional<BatchBundle> compose_batch(TrainKind kind, std::span<const TaskData* const> tasks,
                                         std::span<EpochStream> streams, std::size_t batch_size);

template <typename T>
struct PreparedPart {
  std::string head;
  Tensor<T> input;  // (B, 1, T, H, W)
  std::vector<std::size_t> labels;
  std::vector<std::size_t> domains;
};

// Converts a bundle to model inputs. With a policy, every sample is
// augmented using the substream "aug/<epoch>/<step>/<part>/<slot>".
std::vector<PreparedPart<float>> prepare_parts(const BatchBundle& bundle, const BaselineSpec& spec,
                                               const AugPolicy* policy, const Rng& root, std::size_t epoch,
                                               std::size_t step);

template <typename T>
struct StepLoss {
  Tensor<T> total;
  std::vector<std::pair<std::string, Tensor<T>>> heads;
};

// Unweighted sum of the mean cross-entropy of every head involved.
template <typename T>
StepLoss<T> step_loss(TrainKind kind, ModelAssembly<T>& model, const std::vector<PreparedPart<T>>& parts,
                      T lambda = T(1));

// Loads a baseline checkpoint into a freshly built model, then replaces the
// class head with one of spec.num_classes outputs. Throws FormatError if the
// checkpoint is not a compatible baseline.
ModelAssembly<float> finetune_init(const Checkpoint& source, const BaselineSpec& spec, const Rng& rng);

struct EpochRecord {
  std::size_t epoch = 0;
  std::vector<std::pair<std::string, double>> train_loss;  // per head, mean over steps
  std::vector<std::pair<std::string, double>> val_acc;     // per dataset, plus "domain" for DANN
  double wall_seconds = 0.0;

  double acc(std::string_view key) const;
};

// One tab-separated line per epoch. Wall time is excluded so identical runs
// produce identical text.
std::string format_history(std::span<const EpochRecord> history);
std::string format_timings(std::span<const EpochRecord> history);

// Called after every epoch; returning true ends training.
using EpochObserver = std::function<bool(const EpochRecord&, ModelAssembly<float>&)>;

struct TrainResult {
  ModelAssembly<float> model;  // state after the last epoch
  Checkpoint best;
  Checkpoint last;
  std::vector<EpochRecord> history;
  std::string target_key;
};

// `data` holds one TaskData per configured dataset, in any order.
TrainResult train(const TrainConfig& cfg, const std::vector<TaskData>& data, const EpochObserver& observer = {});

}  // namespace mouthnet
