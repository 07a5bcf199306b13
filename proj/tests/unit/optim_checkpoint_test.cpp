#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "mouthnet/checkpoint.hpp"
#include "mouthnet/io.hpp"
#include "mouthnet/ops.hpp"
#include "mouthnet/optim.hpp"
#include "oracles.hpp"

using namespace mouthnet;
using namespace mouthnet::testing;

namespace {

// Leaves a gradient equal to g on p.
void set_grad(Tensor<float>& p, const std::vector<float>& g) {
  p.zero_grad();
  backward(sum(mul(p, Tensor<float>(p.shape(), g))));
}

Tensor<float> param(std::vector<float> values) {
  const Shape shape{values.size()};
  Tensor<float> t(shape, std::move(values));
  t.set_requires_grad(true);
  return t;
}

Checkpoint sample_checkpoint() {
  auto m = build_baseline<float>(toy_spec(), Rng(1));
  Checkpoint c;
  c.tensors = snapshot_tensors(m);
  c.epoch = 17;
  c.best_val = 63.25;
  c.rng_seed = 0xDEADBEEFULL;
  c.rng_counter = 12345;
  c.adam.step = 9;
  Rng rng(2);
  for (const auto& [name, t] : m.named_parameters()) {
    c.adam.m.emplace_back(name, random_tensor<float>(t.shape(), rng));
    c.adam.v.emplace_back(name, random_tensor<float>(t.shape(), rng, 0.0, 1.0));
  }
  return c;
}

FormatError::Kind decode_kind(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode accepted bad bytes";
  return FormatError::Kind::corrupt;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  auto p = param({0.5f, -2.0f, 3.0f});
  set_grad(p, {1.0f, -4.0f, 1e-3f});
  AdamState state;
  adam_step({{"p", p}}, state, AdamHyper{});
  EXPECT_EQ(state.step, 1u);
  // Bias-corrected first step is lr * g / (|g| + eps).
  EXPECT_NEAR(p.data()[0], 0.5f - 1e-5f, 1e-8);
  EXPECT_NEAR(p.data()[1], -2.0f + 1e-5f, 1e-8);
  EXPECT_NEAR(p.data()[2], 3.0f - 1e-5f * (1e-3 / (1e-3 + 1e-8)), 1e-7);
}

TEST(Adam, MatchesScalarRecurrenceOverSeveralSteps) {
  const AdamHyper h{1e-2, 0.8, 0.95, 1e-6};
  Rng rng(3);
  auto p = param({0.1f, 0.2f, -0.3f, 0.4f});
  std::vector<double> ref(p.data().begin(), p.data().end()), m(4, 0.0), v(4, 0.0);
  AdamState state;
  for (int step = 1; step <= 6; ++step) {
    std::vector<float> g(4);
    for (auto& x : g) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    set_grad(p, g);
    adam_step({{"p", p}}, state, h);
    for (std::size_t i = 0; i < 4; ++i) {
      m[i] = h.beta1 * m[i] + (1 - h.beta1) * g[i];
      v[i] = h.beta2 * v[i] + (1 - h.beta2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(h.beta1, step)), vh = v[i] / (1 - std::pow(h.beta2, step));
      ref[i] -= h.lr * mh / (std::sqrt(vh) + h.eps);
    }
  }
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(p.data()[i], ref[i], 1e-6);
}

TEST(Adam, ParametersWithoutGradientStayPut) {
  auto p = param({1.0f}), q = param({2.0f});
  set_grad(p, {0.5f});
  AdamState state;
  adam_step({{"p", p}, {"q", q}}, state, AdamHyper{});
  EXPECT_EQ(q.data()[0], 2.0f);
  EXPECT_NE(p.data()[0], 1.0f);
  // A zero gradient yields a zero update.
  auto z = param({4.0f});
  set_grad(z, {0.0f});
  AdamState fresh;
  adam_step({{"z", z}}, fresh, AdamHyper{});
  EXPECT_EQ(z.data()[0], 4.0f);
}

TEST(Adam, MomentShapeMismatchIsRejected) {
  auto p = param({1.0f, 2.0f});
  set_grad(p, {1.0f, 1.0f});
  AdamState state;
  state.m.emplace_back("p", Tensor<float>::zeros({3}));
  EXPECT_THROW(adam_step({{"p", p}}, state, AdamHyper{}), ShapeError);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const Checkpoint c = sample_checkpoint();
  const auto bytes = encode_checkpoint(c);
  const Checkpoint d = decode_checkpoint(bytes);
  EXPECT_TRUE(same_tensors(c.tensors, d.tensors));
  EXPECT_TRUE(same_tensors(c.adam.m, d.adam.m));
  EXPECT_TRUE(same_tensors(c.adam.v, d.adam.v));
  EXPECT_EQ(d.epoch, 17u);
  EXPECT_EQ(d.best_val, 63.25);
  EXPECT_EQ(d.rng_seed, c.rng_seed);
  EXPECT_EQ(d.rng_counter, c.rng_counter);
  EXPECT_EQ(d.adam.step, 9u);
  EXPECT_EQ(encode_checkpoint(d), bytes);
}

TEST(Checkpoint, FileRoundTrip) {
  TempDir dir("ckpt");
  const Checkpoint c = sample_checkpoint();
  save_checkpoint(dir.path() / "a" / "model.mckp", c);
  EXPECT_EQ(encode_checkpoint(load_checkpoint(dir.path() / "a" / "model.mckp")), encode_checkpoint(c));
  EXPECT_THROW(load_checkpoint(dir.path() / "missing.mckp"), std::exception);
}

TEST(Checkpoint, DecodeErrorsAreClassified) {
  const auto good = encode_checkpoint(sample_checkpoint());
  auto magic = good;
  magic[1] = 'X';
  EXPECT_EQ(decode_kind(magic), FormatError::Kind::bad_magic);
  auto version = good;
  version[4] = kCheckpointVersion + 1;
  EXPECT_EQ(decode_kind(version), FormatError::Kind::version_mismatch);
  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, good.size() / 2, good.size() - 1})
    EXPECT_EQ(decode_kind({good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut)}),
              FormatError::Kind::truncated)
        << cut;
  auto trailing = good;
  trailing.push_back(1);
  EXPECT_EQ(decode_kind(trailing), FormatError::Kind::corrupt);
}

TEST(Checkpoint, LoadIntoModelIsStrict) {
  const auto spec = toy_spec();
  auto source = build_baseline<float>(spec, Rng(5));
  Checkpoint c;
  c.tensors = snapshot_tensors(source);

  auto target = build_baseline<float>(spec, Rng(6));
  load_into_model(c, target);
  EXPECT_TRUE(same_tensors(snapshot_tensors(target), c.tensors));

  auto wider = build_baseline<float>(toy_spec({}, 4), Rng(6));
  EXPECT_THROW(load_into_model(c, wider), FormatError);
  auto dann = build_dann<float>(spec, Rng(6));
  EXPECT_THROW(load_into_model(c, dann), FormatError);
  Checkpoint extra = c;
  extra.tensors.emplace_back("head.other.weight", Tensor<float>::zeros({1}));
  EXPECT_THROW(load_into_model(extra, target), FormatError);
}

TEST(Checkpoint, SnapshotIsADeepCopy) {
  auto m = build_baseline<float>(toy_spec(), Rng(7));
  const auto snap = snapshot_tensors(m);
  m.convs[0].weight.mutable_data()[0] += 1.0f;
  EXPECT_FALSE(same_tensors(snap, snapshot_tensors(m)));
}
