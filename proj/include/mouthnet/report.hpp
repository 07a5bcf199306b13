#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mouthnet/datapipe.hpp"
#include "mouthnet/models.hpp"
#include "mouthnet/trainer.hpp"

namespace mouthnet {

// Result columns in display order.
inline const std::array<DatasetId, 5> kTestColumns{DatasetId::M, DatasetId::Mbar, DatasetId::GLipsM,
                                                    DatasetId::GLipsR, DatasetId::LRW};

// One training run of the experiment grid. For fine-tunes, `source` is the
// dataset of the baseline whose checkpoint seeds the run and `datasets` is {M}.
struct RunSpec {
  TrainKind kind = TrainKind::baseline;
  std::vector<DatasetId> datasets;
  std::optional<DatasetId> source;

  // Display name, e.g. "Baseline: GLipsM -> M" or "MTL: M & GLipsR".
  std::string row_name() const;
  // Filesystem-safe identifier, e.g. "finetune_GLipsM_M"; also keys the run seed.
  std::string slug() const;
  // Test sets this run is scored on: each training dataset, plus Mbar when M is one.
  std::vector<DatasetId> test_columns() const;
  // Head that scores a test column.
  std::string head_for(DatasetId column) const;

  bool operator==(const RunSpec&) const = default;
};

// All runs in display order: baselines, fine-tunes, DANN, then MTL runs of
// M with every non-empty subset of {GLipsM, GLipsR, LRW} by subset size.
std::vector<RunSpec> grid_runs();
// Display group: 0 baselines, 1 fine-tunes, 2 DANN, 3.. MTL by task count.
int row_group(std::string_view row_name);

class ResultsMatrix {
 public:
  // Throws std::invalid_argument for accuracies outside [0, 100].
  void set(const std::string& row, DatasetId column, double accuracy);
  std::optional<double> get(std::string_view row, DatasetId column) const;
  // Rows in insertion order.
  const std::vector<std::string>& rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }

 private:
  std::vector<std::string> rows_;
  std::map<std::string, std::map<DatasetId, double>, std::less<>> cells_;
};

// Two decimals, rounded half-up.
std::string format_accuracy(double accuracy);

// Fixed-width table with rows grouped in display order and a rule between
// groups. Absent cells render as "-".
std::string render_table(const ResultsMatrix& matrix);

// Tab-separated "model, testset, accuracy" lines, one per present cell.
std::string format_results(const ResultsMatrix& matrix);
ResultsMatrix parse_results(std::string_view text);

// Scores every run on its test columns. `load_model` returns the run's
// selected model (and throws if its checkpoint is missing); columns whose
// head is absent from the model are skipped.
using ModelLoader = std::function<ModelAssembly<float>(const RunSpec&)>;
ResultsMatrix evaluate_grid(std::span<const RunSpec> runs, const ModelLoader& load_model,
                            const std::map<DatasetId, std::vector<Example>>& test_sets, std::size_t batch_size = 64);

}  // namespace mouthnet
