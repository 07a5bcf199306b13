#include <gtest/gtest.h>

#include <set>

#include "fixtures.hpp"
#include "mouthnet/io.hpp"
#include "mouthnet/metrics.hpp"
#include "mouthnet/report.hpp"

using namespace mouthnet;
using namespace mouthnet::testing;

namespace {

const std::filesystem::path kGolden = MOUTHNET_GOLDEN_DIR;

std::vector<Example> examples_with_labels(std::size_t n, std::size_t classes, const ClipDims& dims, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = rng.below(classes);
    out.push_back({moving_pattern_clip(label % 3, 3, dims, rng), label});
  }
  return out;
}

void flatten_heads(ModelAssembly<float>& m) {
  for (const auto& name : m.head_names()) {
    for (auto& v : m.head(name).weight.mutable_data()) v = 0;
    for (auto& v : m.head(name).bias.mutable_data()) v = 0;
  }
}

}  // namespace

TEST(Grid, FifteenRunsInTableOrder) {
  const auto runs = grid_runs();
  std::vector<std::string> names;
  for (const auto& r : runs) names.push_back(r.row_name());
  EXPECT_EQ(names, (std::vector<std::string>{
                       "Baseline: M", "Baseline: GLipsM", "Baseline: GLipsR", "Baseline: LRW",
                       "Baseline: GLipsM -> M", "Baseline: GLipsR -> M", "Baseline: LRW -> M", "DANN: M & GLipsM",
                       "MTL: M & GLipsM", "MTL: M & GLipsR", "MTL: M & LRW", "MTL: M & GLipsM & GLipsR",
                       "MTL: M & GLipsM & LRW", "MTL: M & GLipsR & LRW", "MTL: M & GLipsM & GLipsR & LRW"}));
  std::set<std::string> slugs;
  for (const auto& r : runs) slugs.insert(r.slug());
  EXPECT_EQ(slugs.size(), runs.size());
  EXPECT_EQ(runs[4].slug(), "finetune_GLipsM_M");
  std::size_t mtl = 0;
  for (const auto& r : runs) mtl += r.kind == TrainKind::mtl;
  EXPECT_EQ(mtl, 7u);
}

TEST(Grid, TestColumnsFollowTrainingSets) {
  const RunSpec mtl{TrainKind::mtl, {DatasetId::M, DatasetId::GLipsR}, std::nullopt};
  EXPECT_EQ(mtl.test_columns(), (std::vector<DatasetId>{DatasetId::M, DatasetId::Mbar, DatasetId::GLipsR}));
  EXPECT_EQ(mtl.head_for(DatasetId::Mbar), "M");
  const RunSpec lrw{TrainKind::baseline, {DatasetId::LRW}, std::nullopt};
  EXPECT_EQ(lrw.test_columns(), (std::vector<DatasetId>{DatasetId::LRW}));
  EXPECT_EQ(lrw.head_for(DatasetId::LRW), "class");
  const RunSpec dann{TrainKind::dann, {DatasetId::M, DatasetId::GLipsM}, std::nullopt};
  EXPECT_EQ(dann.test_columns(), (std::vector<DatasetId>{DatasetId::M, DatasetId::Mbar, DatasetId::GLipsM}));
}

TEST(Format, TwoDecimalsHalfUp) {
  EXPECT_EQ(format_accuracy(44.0), "44.00");
  EXPECT_EQ(format_accuracy(100.0), "100.00");
  EXPECT_EQ(format_accuracy(0.125), "0.13");
  EXPECT_EQ(format_accuracy(41.065), "41.07");
  EXPECT_EQ(format_accuracy(100.0 * 2 / 3), "66.67");
  EXPECT_EQ(format_accuracy(0.0), "0.00");
}

TEST(Render, PublishedNumbersMatchTheGoldenTable) {
  const auto matrix = parse_results(read_text(kGolden / "table1_results.tsv"));
  EXPECT_EQ(matrix.rows().size(), 15u);
  EXPECT_EQ(render_table(matrix), read_text(kGolden / "table1.txt"));
  EXPECT_EQ(*matrix.get("MTL: M & GLipsR", DatasetId::GLipsR), 41.60);
  EXPECT_FALSE(matrix.get("MTL: M & GLipsR", DatasetId::LRW));
}

TEST(Render, EmptyMatrixIsHeaderOnly) {
  const std::string table = render_table(ResultsMatrix{});
  EXPECT_EQ(table,
            "Model       M    Mbar  GLipsM  GLipsR     LRW\n"
            "---------------------------------------------\n");
}

TEST(Results, FormatParseRoundTrip) {
  ResultsMatrix m;
  m.set("Baseline: M", DatasetId::M, 12.5);
  m.set("Baseline: M", DatasetId::Mbar, 7.25);
  m.set("Baseline: LRW", DatasetId::LRW, 99.99);
  const auto text = format_results(m);
  EXPECT_EQ(text, "Baseline: M\tM\t12.50\nBaseline: M\tMbar\t7.25\nBaseline: LRW\tLRW\t99.99\n");
  EXPECT_EQ(format_results(parse_results(text)), text);
  EXPECT_THROW(m.set("x", DatasetId::M, 100.5), std::invalid_argument);
  EXPECT_THROW(m.set("x", DatasetId::M, -0.1), std::invalid_argument);
  EXPECT_THROW(parse_results("a\tM\n"), std::exception);
}

TEST(Metrics, ArgmaxAndAccuracy) {
  const float v[] = {0.5f, 2.0f, 2.0f, -1.0f};
  EXPECT_EQ(argmax(v), 1u);
  const std::size_t pred[] = {0, 1, 2, 2}, lab[] = {0, 1, 1, 2};
  EXPECT_DOUBLE_EQ(top1_accuracy(pred, lab), 75.0);
  EXPECT_THROW(top1_accuracy(std::span<const std::size_t>{}, std::span<const std::size_t>{}), std::invalid_argument);
}

TEST(Metrics, AccuracyIgnoresExampleOrder) {
  const ClipDims dims{4, 16, 16};
  auto model = build_baseline<float>(toy_spec(dims), Rng(1));
  auto ex = examples_with_labels(40, 3, dims, 2);
  const double a = top1_accuracy(model, ex, "class", 7);
  std::reverse(ex.begin(), ex.end());
  EXPECT_DOUBLE_EQ(top1_accuracy(model, ex, "class", 64), a);
  EXPECT_THROW(top1_accuracy(model, std::span<const Example>{}, "class"), std::invalid_argument);
}

TEST(Metrics, ConstantLogitsScoreNearChance) {
  // Equal logits predict class 0; 750 uniform labels over 15 classes give
  // 6.67% expected with a standard deviation under 1%.
  const ClipDims dims{4, 16, 16};
  auto model = build_baseline<float>(toy_spec(dims, 15), Rng(3));
  flatten_heads(model);
  const auto ex = examples_with_labels(750, 15, dims, 4);
  const double acc = top1_accuracy(model, ex, "class");
  EXPECT_GE(acc, 2.0);
  EXPECT_LE(acc, 12.0);
}

TEST(Evaluate, FillsOnlyTrainedColumns) {
  const ClipDims dims{4, 16, 16};
  const auto spec = toy_spec(dims);
  std::map<DatasetId, std::vector<Example>> tests;
  std::uint64_t seed = 10;
  for (auto d : kTestColumns) tests[d] = examples_with_labels(12, 3, dims, seed++);

  const std::vector<RunSpec> runs{{TrainKind::mtl, {DatasetId::M, DatasetId::GLipsR}, std::nullopt},
                                  {TrainKind::baseline, {DatasetId::LRW}, std::nullopt},
                                  {TrainKind::dann, {DatasetId::M, DatasetId::GLipsM}, std::nullopt}};
  std::vector<std::string> loaded;
  const auto matrix = evaluate_grid(
      runs,
      [&](const RunSpec& r) {
        loaded.push_back(r.slug());
        switch (r.kind) {
          case TrainKind::mtl: {
            std::vector<std::string> heads;
            for (auto d : r.datasets) heads.push_back(to_string(d));
            return build_mtl<float>(spec, heads, Rng(1));
          }
          case TrainKind::dann:
            return build_dann<float>(spec, Rng(1));
          default:
            return build_baseline<float>(spec, Rng(1));
        }
      },
      tests);
  EXPECT_EQ(loaded.size(), 3u);
  auto present = [&](const std::string& row) {
    std::vector<DatasetId> cols;
    for (auto c : kTestColumns)
      if (matrix.get(row, c)) cols.push_back(c);
    return cols;
  };
  EXPECT_EQ(present("MTL: M & GLipsR"), (std::vector<DatasetId>{DatasetId::M, DatasetId::Mbar, DatasetId::GLipsR}));
  EXPECT_EQ(present("Baseline: LRW"), (std::vector<DatasetId>{DatasetId::LRW}));
  EXPECT_EQ(present("DANN: M & GLipsM"), (std::vector<DatasetId>{DatasetId::M, DatasetId::Mbar, DatasetId::GLipsM}));
}

TEST(Evaluate, MissingCheckpointPropagates) {
  const std::vector<RunSpec> runs{{TrainKind::baseline, {DatasetId::M}, std::nullopt}};
  EXPECT_THROW(evaluate_grid(
                   runs, [](const RunSpec&) -> ModelAssembly<float> { throw DataError("missing best.mckp"); },
                   {{DatasetId::M, {}}}),
               DataError);
}
