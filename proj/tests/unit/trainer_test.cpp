#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "fixtures.hpp"
#include "mouthnet/checkpoint.hpp"
#include "mouthnet/layers.hpp"
#include "mouthnet/trainer.hpp"
#include "oracles.hpp"

using namespace mouthnet;
using namespace mouthnet::testing;

namespace {

// Epoch at which training halts for an accuracy trace given per epoch.
template <typename F>
std::size_t stop_epoch(F&& acc_at, const StopRule& rule = {}) {
  std::vector<double> trace;
  while (true) {
    trace.push_back(acc_at(trace.size() + 1));
    if (should_stop(trace, rule)) return trace.size();
  }
}

TrainConfig tiny_config(TrainKind kind, std::vector<DatasetId> datasets) {
  TrainConfig c;
  c.kind = kind;
  c.datasets = std::move(datasets);
  c.model = toy_spec();
  c.batch_size = 8;
  c.adam.lr = 1e-3;
  c.stop = {3, 3, 1};
  c.seed = 21;
  return c;
}

template <typename T>
void zero_head(ModelAssembly<T>& m, const std::string& name) {
  for (auto& v : m.head(name).weight.mutable_data()) v = 0;
  for (auto& v : m.head(name).bias.mutable_data()) v = 0;
}

}  // namespace

TEST(StopRule, BestAtNineHundredStopsAtThousandAndOne) {
  EXPECT_EQ(stop_epoch([](std::size_t e) { return e <= 900 ? e * 0.01 : 1.0; }), 1001u);
}

TEST(StopRule, LateBestRunsToTheCap) {
  EXPECT_EQ(stop_epoch([](std::size_t e) { return e <= 1400 ? e * 0.01 : 1.0; }), 1500u);
}

TEST(StopRule, ImprovementInsideTheWindowResetsIt) {
  EXPECT_EQ(stop_epoch([](std::size_t e) { return e == 900 ? 50.0 : (e == 950 ? 60.0 : 10.0); }), 1051u);
}

TEST(StopRule, EarlyPlateauIsIgnoredBeforeTheGate) {
  EXPECT_EQ(stop_epoch([](std::size_t e) { return e == 1 ? 99.0 : 1.0; }), 1001u);
  EXPECT_EQ(stop_epoch([](std::size_t) { return 5.0; }, StopRule{20, 10, 3}), 11u);
}

TEST(StopRule, BestEpochIsFirstMaximum) {
  const std::vector<double> acc{1, 3, 2, 3};
  EXPECT_EQ(best_epoch(acc), 2u);
  EXPECT_EQ(best_epoch({}), 0u);
  EXPECT_FALSE(should_stop({}, StopRule{}));
}

TEST(TrainConfig, DefaultsAndTargetResolution) {
  TrainConfig c;
  EXPECT_EQ(c.batch_size, 64u);
  EXPECT_EQ(c.adam.lr, 1e-5);
  EXPECT_EQ(c.stop.max_epochs, 1500u);
  c.datasets = {DatasetId::GLipsR, DatasetId::M};
  EXPECT_EQ(c.resolved_target(), DatasetId::M);
  c.datasets = {DatasetId::GLipsR, DatasetId::LRW};
  EXPECT_EQ(c.resolved_target(), DatasetId::GLipsR);
  c.target_task = DatasetId::LRW;
  EXPECT_EQ(c.resolved_target(), DatasetId::LRW);
}

TEST(TrainConfig, EveryViolationIsReported) {
  TrainConfig c;
  c.kind = TrainKind::dann;
  c.datasets = {DatasetId::M, DatasetId::GLipsR};
  c.batch_size = 7;
  c.adam.lr = 0;
  c.stop.early_stop_gate = 2000;
  const auto v = c.violations();
  EXPECT_EQ(v.size(), 4u);
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.violations(), v);
  }
  TrainConfig ft;
  ft.kind = TrainKind::finetune;
  ft.datasets = {DatasetId::M};
  EXPECT_EQ(ft.violations().size(), 1u);
  ft.source_checkpoint = "x.mckp";
  EXPECT_TRUE(ft.violations().empty());
  TrainConfig mtl;
  mtl.kind = TrainKind::mtl;
  mtl.datasets = {DatasetId::M};
  EXPECT_FALSE(mtl.violations().empty());
  mtl.datasets = {DatasetId::M, DatasetId::Mbar};
  EXPECT_FALSE(mtl.violations().empty());
}

TEST(EpochStream, PassesArePermutationsAndSeeded) {
  const Rng root(1);
  EpochStream a(10, root, "M"), b(10, root, "M"), c(10, root, "LRW");
  a.next_pass();
  b.next_pass();
  c.next_pass();
  auto first = a.take(4);
  auto rest = a.take(100);
  EXPECT_EQ(first.size(), 4u);
  EXPECT_EQ(rest.size(), 6u);
  EXPECT_TRUE(a.exhausted());
  EXPECT_TRUE(a.take(1).empty());
  first.insert(first.end(), rest.begin(), rest.end());
  EXPECT_EQ(std::set<std::size_t>(first.begin(), first.end()).size(), 10u);
  EXPECT_EQ(b.take(10), first);
  EXPECT_NE(c.take(10), first);
  a.next_pass();
  EXPECT_NE(a.take(10), first);
}

TEST(EpochStream, CyclicTakeCrossesPasses) {
  EpochStream s(5, Rng(2), "x");
  s.next_pass();
  const auto got = s.take_cyclic(12);
  EXPECT_EQ(got.size(), 12u);
  EXPECT_EQ(std::set<std::size_t>(got.begin(), got.begin() + 5).size(), 5u);
  EXPECT_GE(s.pass(), 3u);
}

TEST(ComposeBatch, BaselineEndsWithAPartialBatch) {
  const auto task = make_task(DatasetId::M, 3, 20, 1, 1, {}, 1);
  const TaskData* tasks[] = {&task};
  std::vector<EpochStream> streams{EpochStream(task.train.size(), Rng(1), "M")};
  streams[0].next_pass();
  auto b1 = compose_batch(TrainKind::baseline, tasks, streams, 64);
  ASSERT_TRUE(b1);
  ASSERT_EQ(b1->parts.size(), 1u);
  EXPECT_EQ(b1->parts[0].examples.size(), 60u);
  EXPECT_EQ(b1->parts[0].head, "class");
  EXPECT_FALSE(compose_batch(TrainKind::baseline, tasks, streams, 64));
}

TEST(ComposeBatch, DannSplitsTheBatchByDomain) {
  const auto m = make_task(DatasetId::M, 3, 20, 1, 1, {}, 1);
  const auto g = make_task(DatasetId::GLipsM, 3, 5, 1, 1, {}, 2);
  const TaskData* tasks[] = {&m, &g};
  std::vector<EpochStream> streams{EpochStream(m.train.size(), Rng(1), "M"),
                                   EpochStream(g.train.size(), Rng(1), "GLipsM")};
  for (auto& s : streams) s.next_pass();
  const auto b = compose_batch(TrainKind::dann, tasks, streams, 64);
  ASSERT_TRUE(b);
  ASSERT_EQ(b->parts.size(), 1u);
  const auto& part = b->parts[0];
  ASSERT_EQ(part.examples.size(), 64u);
  ASSERT_EQ(part.domains.size(), 64u);
  for (std::size_t i = 0; i < 64; ++i) {
    EXPECT_EQ(part.domains[i], i < 32 ? 0u : 1u);
    const auto& pool = i < 32 ? m.train : g.train;
    EXPECT_TRUE(part.examples[i] >= pool.data() && part.examples[i] < pool.data() + pool.size());
    EXPECT_EQ(part.labels[i], part.examples[i]->label);
  }
}

TEST(ComposeBatch, MtlTakesAFullBatchPerTask) {
  const auto m = make_task(DatasetId::M, 3, 30, 1, 1, {}, 1);
  const auto r = make_task(DatasetId::GLipsR, 3, 10, 1, 1, {}, 2);
  const auto l = make_task(DatasetId::LRW, 3, 40, 1, 1, {}, 3);
  const TaskData* tasks[] = {&m, &r, &l};
  std::vector<EpochStream> streams{EpochStream(90, Rng(1), "M"), EpochStream(30, Rng(1), "GLipsR"),
                                   EpochStream(120, Rng(1), "LRW")};
  for (auto& s : streams) s.next_pass();
  std::size_t steps = 0;
  while (auto b = compose_batch(TrainKind::mtl, tasks, streams, 64)) {
    ASSERT_EQ(b->parts.size(), 3u);
    EXPECT_EQ(b->parts[0].head, "M");
    EXPECT_EQ(b->parts[1].head, "GLipsR");
    EXPECT_EQ(b->parts[1].examples.size(), 64u);
    EXPECT_EQ(b->parts[2].examples.size(), 64u);
    ++steps;
  }
  EXPECT_EQ(steps, 2u);  // 90 target samples: 64 then 26
}

TEST(StepLoss, DannAtUniformHeadsIsLogClassesPlusLogTwo) {
  const auto spec = toy_spec({4, 16, 16});
  auto model = build_dann<double>(spec, Rng(4));
  zero_head(model, "class");
  zero_head(model, "domain");
  Rng rng(5);
  PreparedPart<double> part{"class", random_tensor<double>(spec.input_shape(4), rng, 0.0, 1.0), {0, 1, 2, 0},
                            {0, 0, 1, 1}};
  const auto loss = step_loss<double>(TrainKind::dann, model, {part});
  EXPECT_NEAR(loss.total.item(), std::log(3.0) + std::log(2.0), 1e-12);
  ASSERT_EQ(loss.heads.size(), 2u);
}

TEST(StepLoss, MtlTotalIsTheSumOfHeadLosses) {
  const auto spec = toy_spec({4, 16, 16});
  auto model = build_mtl<double>(spec, {"M", "GLipsR", "LRW"}, Rng(6));
  Rng rng(7);
  std::vector<PreparedPart<double>> parts;
  for (const char* h : {"M", "GLipsR", "LRW"})
    parts.push_back({h, random_tensor<double>(spec.input_shape(3), rng, 0.0, 1.0), {0, 2, 1}, {}});
  const auto loss = step_loss<double>(TrainKind::mtl, model, parts);
  ASSERT_EQ(loss.heads.size(), 3u);
  double expect = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto logits = forward_mtl(model, parts[i].input, parts[i].head, RunMode::train);
    const double ce = naive_cross_entropy(std::vector<double>(logits.data().begin(), logits.data().end()),
                                          3, parts[i].labels);
    EXPECT_NEAR(loss.heads[i].second.item(), ce, 1e-6) << parts[i].head;
    expect += loss.heads[i].second.item();
  }
  EXPECT_NEAR(loss.total.item(), expect, 1e-12);
}

TEST(Finetune, KeepsTheTrunkAndReplacesTheHead) {
  const auto spec = toy_spec();
  auto source = build_baseline<float>(spec, Rng(8));
  Checkpoint ckpt;
  ckpt.tensors = snapshot_tensors(source);
  auto target_spec = spec;
  target_spec.num_classes = 5;
  auto model = finetune_init(ckpt, target_spec, Rng(9));
  EXPECT_EQ(checksum(model.trunk_parameters()), checksum(source.trunk_parameters()));
  EXPECT_EQ(checksum(model.named_buffers()), checksum(source.named_buffers()));
  EXPECT_EQ(model.head("class").weight.shape(), (Shape{5, spec.summary_width()}));
  for (const auto& [n, t] : model.named_parameters()) EXPECT_TRUE(t.requires_grad()) << n;

  Checkpoint dann;
  dann.tensors = snapshot_tensors(build_dann<float>(spec, Rng(8)));
  EXPECT_THROW(finetune_init(dann, target_spec, Rng(9)), FormatError);
}

TEST(Train, IdenticalConfigsGiveIdenticalRuns) {
  const auto task = make_task(DatasetId::M, 3, 4, 2, 1, {}, 10);
  auto cfg = tiny_config(TrainKind::baseline, {DatasetId::M});
  const auto a = train(cfg, {task});
  const auto b = train(cfg, {task});
  EXPECT_EQ(format_history(a.history), format_history(b.history));
  EXPECT_TRUE(same_tensors(a.last.tensors, b.last.tensors));
  EXPECT_TRUE(same_tensors(a.best.tensors, b.best.tensors));
  cfg.seed = 22;
  EXPECT_FALSE(same_tensors(train(cfg, {task}).last.tensors, a.last.tensors));
}

TEST(Train, HistoryInvariants) {
  const auto m = make_task(DatasetId::M, 3, 4, 2, 1, {}, 11);
  const auto g = make_task(DatasetId::GLipsM, 3, 4, 2, 1, {}, 12);
  const auto cfg = tiny_config(TrainKind::dann, {DatasetId::M, DatasetId::GLipsM});
  std::size_t observed = 0;
  const auto r = train(cfg, {g, m}, [&](const EpochRecord& rec, ModelAssembly<float>&) {
    EXPECT_EQ(rec.epoch, ++observed);
    return false;
  });
  ASSERT_EQ(r.history.size(), 3u);
  EXPECT_EQ(r.target_key, "M");
  double best = -1;
  for (std::size_t i = 0; i < r.history.size(); ++i) {
    const auto& rec = r.history[i];
    EXPECT_EQ(rec.epoch, i + 1);
    for (const auto& [k, v] : rec.val_acc) {
      EXPECT_GE(v, 0.0) << k;
      EXPECT_LE(v, 100.0) << k;
    }
    EXPECT_NO_THROW(rec.acc("domain"));
    for (const auto& [k, v] : rec.train_loss) EXPECT_TRUE(std::isfinite(v)) << k;
    best = std::max(best, rec.acc("M"));
  }
  EXPECT_EQ(r.best.best_val, best);
  EXPECT_EQ(r.last.epoch, 3u);
  EXPECT_EQ(format_history(r.history).find("wall"), std::string::npos);
}

TEST(Train, ObserverCanStopEarly) {
  const auto task = make_task(DatasetId::LRW, 3, 4, 2, 1, {}, 13);
  auto cfg = tiny_config(TrainKind::baseline, {DatasetId::LRW});
  cfg.stop = {50, 50, 1};
  const auto r = train(cfg, {task}, [](const EpochRecord& rec, ModelAssembly<float>&) { return rec.epoch == 2; });
  EXPECT_EQ(r.history.size(), 2u);
}

TEST(Train, DivergenceIsReported) {
  const auto task = make_task(DatasetId::M, 3, 4, 2, 1, {}, 14);
  auto cfg = tiny_config(TrainKind::baseline, {DatasetId::M});
  cfg.adam.lr = 1e38;
  cfg.augment = false;
  EXPECT_THROW(train(cfg, {task}), TrainingError);
}

TEST(Train, MismatchedDataIsRejected) {
  const auto m = make_task(DatasetId::M, 3, 4, 2, 1, {}, 15);
  auto cfg = tiny_config(TrainKind::mtl, {DatasetId::M, DatasetId::LRW});
  EXPECT_THROW(train(cfg, {m}), std::exception);
  const auto l = make_task(DatasetId::LRW, 4, 4, 2, 1, {}, 16);
  EXPECT_THROW(train(cfg, {m, l}), std::exception);
}
