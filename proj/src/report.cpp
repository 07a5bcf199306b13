#include "mouthnet/report.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mouthnet/metrics.hpp"

namespace mouthnet {

namespace {

constexpr std::size_t kCellWidth = 6;
constexpr std::string_view kCellGap = "  ";

std::string join(const std::vector<DatasetId>& ids, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += sep;
    out += to_string(ids[i]);
  }
  return out;
}

}  // namespace

std::string RunSpec::row_name() const {
  switch (kind) {
    case TrainKind::baseline:
      return "Baseline: " + join(datasets, " & ");
    case TrainKind::finetune:
      return "Baseline: " + (source ? to_string(*source) : std::string("?")) + " -> " + join(datasets, " & ");
    case TrainKind::dann:
      return "DANN: " + join(datasets, " & ");
    case TrainKind::mtl:
      return "MTL: " + join(datasets, " & ");
  }
  return "?";
}

std::string RunSpec::slug() const {
  std::string out = to_string(kind);
  if (source) out += "_" + to_string(*source);
  for (auto d : datasets) out += "_" + to_string(d);
  return out;
}

std::vector<DatasetId> RunSpec::test_columns() const {
  std::vector<DatasetId> out;
  for (auto column : kTestColumns) {
    const DatasetId trained = column == DatasetId::Mbar ? DatasetId::M : column;
    if (std::find(datasets.begin(), datasets.end(), trained) != datasets.end()) out.push_back(column);
  }
  return out;
}

std::string RunSpec::head_for(DatasetId column) const {
  return class_head(kind, column == DatasetId::Mbar ? DatasetId::M : column);
}

std::vector<RunSpec> grid_runs() {
  using D = DatasetId;
  const std::array<D, 3> vsr{D::GLipsM, D::GLipsR, D::LRW};
  std::vector<RunSpec> runs;
  runs.push_back({TrainKind::baseline, {D::M}, std::nullopt});
  for (auto d : vsr) runs.push_back({TrainKind::baseline, {d}, std::nullopt});
  for (auto d : vsr) runs.push_back({TrainKind::finetune, {D::M}, d});
  runs.push_back({TrainKind::dann, {D::M, D::GLipsM}, std::nullopt});
  // Subsets by size, each size in lexicographic order of membership.
  for (std::size_t size = 1; size <= vsr.size(); ++size) {
    std::vector<bool> pick(vsr.size(), false);
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(size), true);
    do {
      RunSpec r{TrainKind::mtl, {D::M}, std::nullopt};
      for (std::size_t i = 0; i < vsr.size(); ++i)
        if (pick[i]) r.datasets.push_back(vsr[i]);
      runs.push_back(std::move(r));
    } while (std::prev_permutation(pick.begin(), pick.end()));
  }
  return runs;
}

int row_group(std::string_view row) {
  if (row.rfind("Baseline: ", 0) == 0) return row.find(" -> ") == std::string_view::npos ? 0 : 1;
  if (row.rfind("DANN: ", 0) == 0) return 2;
  if (row.rfind("MTL: ", 0) == 0) return 2 + static_cast<int>(std::count(row.begin(), row.end(), '&'));
  return 100;
}

void ResultsMatrix::set(const std::string& row, DatasetId column, double accuracy) {
  if (!(accuracy >= 0.0 && accuracy <= 100.0))
    throw std::invalid_argument(fmt::format("results: accuracy {} for '{}' / {} is outside [0, 100]", accuracy, row,
                                            to_string(column)));
  if (!cells_.count(row)) rows_.push_back(row);
  cells_[row][column] = accuracy;
}

std::optional<double> ResultsMatrix::get(std::string_view row, DatasetId column) const {
  const auto r = cells_.find(row);
  if (r == cells_.end()) return std::nullopt;
  const auto c = r->second.find(column);
  if (c == r->second.end()) return std::nullopt;
  return c->second;
}

std::string format_accuracy(double accuracy) {
  const auto cents = static_cast<long long>(std::floor(accuracy * 100.0 + 0.5 + 1e-9));
  return fmt::format("{}.{:02}", cents / 100, cents % 100);
}

std::string render_table(const ResultsMatrix& matrix) {
  // Known rows keep grid order within their group; others follow in insertion order.
  std::vector<std::string> canonical;
  for (const auto& r : grid_runs()) canonical.push_back(r.row_name());
  auto rank = [&](const std::string& row) {
    const auto it = std::find(canonical.begin(), canonical.end(), row);
    return it == canonical.end() ? canonical.size() : static_cast<std::size_t>(it - canonical.begin());
  };
  std::vector<std::string> rows = matrix.rows();
  std::stable_sort(rows.begin(), rows.end(), [&](const std::string& a, const std::string& b) {
    const int ga = row_group(a), gb = row_group(b);
    if (ga != gb) return ga < gb;
    return rank(a) < rank(b);
  });

  std::size_t name_width = std::string_view("Model").size();
  for (const auto& r : rows) name_width = std::max(name_width, r.size());
  const std::size_t total = name_width + kTestColumns.size() * (kCellGap.size() + kCellWidth);
  const std::string rule(total, '-');

  std::string out = fmt::format("{:<{}}", "Model", name_width);
  for (auto c : kTestColumns) out += fmt::format("{}{:>{}}", kCellGap, to_string(c), kCellWidth);
  out += "\n" + rule + "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0 && row_group(rows[i]) != row_group(rows[i - 1])) out += rule + "\n";
    out += fmt::format("{:<{}}", rows[i], name_width);
    for (auto c : kTestColumns) {
      const auto v = matrix.get(rows[i], c);
      out += fmt::format("{}{:>{}}", kCellGap, v ? format_accuracy(*v) : "-", kCellWidth);
    }
    out += "\n";
  }
  return out;
}

std::string format_results(const ResultsMatrix& matrix) {
  std::string out;
  for (const auto& row : matrix.rows())
    for (auto c : kTestColumns)
      if (auto v = matrix.get(row, c)) out += fmt::format("{}\t{}\t{}\n", row, to_string(c), format_accuracy(*v));
  return out;
}

ResultsMatrix parse_results(std::string_view text) {
  ResultsMatrix m;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos)
      throw DataError(fmt::format("results line {}: expected 3 tab-separated fields", lineno));
    double value = 0;
    try {
      std::size_t used = 0;
      value = std::stod(line.substr(t2 + 1), &used);
      if (used != line.size() - t2 - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DataError(fmt::format("results line {}: bad accuracy '{}'", lineno, line.substr(t2 + 1)));
    }
    m.set(line.substr(0, t1), parse_dataset(line.substr(t1 + 1, t2 - t1 - 1)), value);
  }
  return m;
}

ResultsMatrix evaluate_grid(std::span<const RunSpec> runs, const ModelLoader& load_model,
                            const std::map<DatasetId, std::vector<Example>>& test_sets, std::size_t batch_size) {
  ResultsMatrix matrix;
  for (const auto& run : runs) {
    auto model = load_model(run);
    for (auto column : run.test_columns()) {
      const auto head = run.head_for(column);
      if (!model.has_head(head)) continue;
      const auto it = test_sets.find(column);
      if (it == test_sets.end()) throw DataError("evaluate: no test set loaded for " + to_string(column));
      matrix.set(run.row_name(), column, top1_accuracy(model, it->second, head, batch_size));
    }
  }
  return matrix;
}

}  // namespace mouthnet
