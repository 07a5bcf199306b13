#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "fixtures.hpp"
#include "mouthnet/layers.hpp"
#include "mouthnet/models.hpp"
#include "mouthnet/ops.hpp"
#include "oracles.hpp"

using namespace mouthnet;
using namespace mouthnet::testing;

namespace {

Shape stage(const std::vector<ShapeStage>& trace, const std::string& name) {
  for (const auto& s : trace)
    if (s.name == name) return s.shape;
  ADD_FAILURE() << "no stage " << name;
  return {};
}

template <typename T>
Tensor<T> toy_batch(const BaselineSpec& spec, std::size_t batch, std::uint64_t seed) {
  Rng rng(seed);
  return random_tensor<T>(spec.input_shape(batch), rng, 0.0, 1.0);
}

}  // namespace

TEST(ShapeTrace, FullSizeConfiguration) {
  const BaselineSpec spec;
  const auto trace = shape_trace(spec, 2);
  EXPECT_EQ(stage(trace, "input"), (Shape{2, 1, 30, 96, 96}));
  EXPECT_EQ(stage(trace, "conv1"), (Shape{2, 16, 30, 48, 48}));
  EXPECT_EQ(stage(trace, "pool1"), (Shape{2, 16, 30, 24, 24}));
  EXPECT_EQ(stage(trace, "pool2"), (Shape{2, 16, 30, 12, 12}));
  EXPECT_EQ(stage(trace, "pool3"), (Shape{2, 32, 30, 6, 6}));
  EXPECT_EQ(stage(trace, "sequence"), (Shape{2, 30, 1152}));
  EXPECT_EQ(stage(trace, "summary"), (Shape{2, 512}));
  EXPECT_EQ(stage(trace, "logits"), (Shape{2, 15}));
  EXPECT_EQ(spec.trunk_feature_width(), 1152u);
}

TEST(ShapeTrace, TooSmallInputIsRejected) {
  BaselineSpec spec;
  spec.height = spec.width = 0;
  EXPECT_THROW(spec.trunk_feature_width(), ShapeError);
}

TEST(Models, ToyForwardMatchesTrace) {
  const auto spec = toy_spec();
  auto m = build_baseline<float>(spec, Rng(1));
  const auto trunk = forward_trunk(m, toy_batch<float>(spec, 3, 2), RunMode::eval);
  const auto trace = shape_trace(spec, 3);
  EXPECT_EQ(trunk.sequence.shape(), stage(trace, "sequence"));
  EXPECT_EQ(trunk.summary.shape(), stage(trace, "summary"));
  EXPECT_EQ(forward_head(m, trunk.summary, "class").shape(), stage(trace, "logits"));
  EXPECT_THROW(forward_trunk(m, Tensor<float>::zeros({3, 1, 8, 16, 16}), RunMode::eval), ShapeError);
}

TEST(Models, ParameterNamesAndInitialisation) {
  const auto spec = toy_spec();
  auto m = build_baseline<float>(spec, Rng(1));
  std::set<std::string> names;
  for (const auto& [n, t] : m.named_parameters()) {
    names.insert(n);
    EXPECT_TRUE(t.requires_grad()) << n;
  }
  for (const char* n : {"bn_in.gamma", "conv1.weight", "conv3.bias", "bn2.beta", "gru.l0.fwd.w_ih", "gru.l1.bwd.b_hh",
                        "head.class.weight", "head.class.bias"})
    EXPECT_TRUE(names.count(n)) << n;
  // Conv weights lie in the fan-in bound and biases start at zero.
  const auto& w = m.convs[1].weight;
  const double bound = std::sqrt(1.0 / (4.0 * 3 * 5 * 5));
  for (float v : w.data()) EXPECT_LE(std::abs(v), bound + 1e-7);
  for (float v : m.convs[1].bias.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(m.named_buffers().size(), 8u);
}

TEST(Models, InitialisationIsSeedDeterministic) {
  const auto spec = toy_spec();
  EXPECT_EQ(checksum(build_baseline<float>(spec, Rng(3)).named_parameters()),
            checksum(build_baseline<float>(spec, Rng(3)).named_parameters()));
  EXPECT_NE(checksum(build_baseline<float>(spec, Rng(3)).named_parameters()),
            checksum(build_baseline<float>(spec, Rng(4)).named_parameters()));
}

TEST(Models, DannHeadsAndLambdaIndependentForward) {
  const auto spec = toy_spec();
  auto m = build_dann<float>(spec, Rng(5));
  EXPECT_EQ(m.head_names(), (std::vector<std::string>{"class", "domain"}));
  EXPECT_EQ(m.head("domain").width, 2u);
  EXPECT_TRUE(m.head("domain").reversed);
  const auto x = toy_batch<float>(spec, 2, 6);
  const auto a = forward_dann(m, x, 1.0f, RunMode::eval);
  const auto b = forward_dann(m, x, 0.25f, RunMode::eval);
  EXPECT_EQ(std::vector<float>(a.domain_logits.data().begin(), a.domain_logits.data().end()),
            std::vector<float>(b.domain_logits.data().begin(), b.domain_logits.data().end()));
  EXPECT_EQ(a.class_logits.shape(), (Shape{2, 3}));
}

TEST(Models, DomainGradientIntoTrunkIsNegatedByReversal) {
  const auto spec = toy_spec({4, 16, 16});
  auto m = build_dann<double>(spec, Rng(7));
  const auto x = toy_batch<double>(spec, 2, 8);
  const std::vector<std::size_t> domains{0, 1};
  auto trunk_grad = [&](bool reversed) {
    m.zero_grad();
    const auto trunk = forward_trunk(m, x, RunMode::eval);
    const auto& h = m.head("domain");
    const auto feats = reversed ? gradient_reversal(trunk.summary, 1.0) : trunk.summary;
    backward(softmax_cross_entropy(linear(feats, h.weight, h.bias), std::span<const std::size_t>(domains)));
    return std::vector<double>(m.convs[0].weight.grad().begin(), m.convs[0].weight.grad().end());
  };
  const auto plain = trunk_grad(false), rev = trunk_grad(true);
  ASSERT_EQ(plain.size(), rev.size());
  double norm = 0;
  for (std::size_t i = 0; i < plain.size(); ++i) {
    EXPECT_EQ(rev[i], -plain[i]);
    norm += std::abs(plain[i]);
  }
  EXPECT_GT(norm, 0.0);
}

TEST(Models, MtlHasOneHeadPerTaskAndRejectsDuplicates) {
  const auto spec = toy_spec();
  auto m = build_mtl<float>(spec, {"M", "GLipsR", "LRW"}, Rng(9));
  EXPECT_EQ(m.head_names(), (std::vector<std::string>{"M", "GLipsR", "LRW"}));
  EXPECT_EQ(forward_mtl(m, toy_batch<float>(spec, 2, 10), "LRW", RunMode::eval).shape(), (Shape{2, 3}));
  EXPECT_THROW(forward_mtl(m, toy_batch<float>(spec, 2, 10), "GLipsM", RunMode::eval), std::exception);
  EXPECT_THROW(build_mtl<float>(spec, {"M", "M"}, Rng(9)), std::invalid_argument);
}

TEST(Models, EvalModeLeavesRunningStatsAlone) {
  const auto spec = toy_spec();
  auto m = build_baseline<float>(spec, Rng(11));
  const auto before = checksum(m.named_buffers());
  forward_baseline(m, toy_batch<float>(spec, 2, 12), RunMode::eval);
  EXPECT_EQ(checksum(m.named_buffers()), before);
  forward_baseline(m, toy_batch<float>(spec, 2, 12), RunMode::train);
  EXPECT_NE(checksum(m.named_buffers()), before);
}

TEST(Models, ReinitHeadKeepsTrunk) {
  const auto spec = toy_spec();
  auto m = build_baseline<float>(spec, Rng(13));
  const auto trunk = checksum(m.trunk_parameters());
  const auto head = m.head("class").weight.clone();
  reinit_head(m, Rng(14), 5);
  EXPECT_EQ(checksum(m.trunk_parameters()), trunk);
  EXPECT_EQ(m.head("class").weight.shape(), (Shape{5, spec.summary_width()}));
  EXPECT_TRUE(m.head("class").weight.requires_grad());
  auto dann = build_dann<float>(spec, Rng(13));
  EXPECT_THROW(reinit_head(dann, Rng(1)), std::invalid_argument);
  (void)head;
}

TEST(Models, ModelKindNames) {
  for (auto k : {ModelKind::baseline, ModelKind::dann, ModelKind::mtl}) EXPECT_EQ(parse_model_kind(to_string(k)), k);
  EXPECT_THROW(parse_model_kind("cnn"), std::invalid_argument);
}
