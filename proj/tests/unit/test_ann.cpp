#include <gtest/gtest.h>

#include <random>

#include "ftbc/ann.hpp"
#include "ftbc/dataset.hpp"
#include "../oracles/naive.hpp"
#include "../support.hpp"

using namespace ftbc;
using testing_support::random_tensor;

namespace {

ActivationSpec trelu(double a) { return {ActivationKind::trelu, a, 1}; }
ActivationSpec stairs(int l) { return {ActivationKind::stairs, 1.0, l}; }

AnnModel bn_model(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0.5, 2.0);
  AnnModel m{{2, 5, 5}, {}};
  BatchNormLayer bn{random_tensor({3}, rng, 0.5, 2.0), random_tensor({3}, rng), random_tensor({3}, rng),
                    random_tensor({3}, rng, 0.2, 3.0), 1e-5};
  m.layers.emplace_back(Conv2dLayer{random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng), 1, 1});
  m.layers.emplace_back(bn);
  m.layers.emplace_back(ActivationLayer{{}, {}});
  m.layers.emplace_back(AvgPoolLayer{1});
  m.layers.emplace_back(LinearLayer{random_tensor({4, 75}, rng), random_tensor({4}, rng)});
  BatchNormLayer bn2{random_tensor({4}, rng, 0.5, 2.0), random_tensor({4}, rng), random_tensor({4}, rng),
                     random_tensor({4}, rng, 0.2, 3.0), 1e-3};
  m.layers.emplace_back(bn2);
  m.layers.emplace_back(ActivationLayer{{}, {}});
  m.layers.emplace_back(LinearLayer{random_tensor({3, 4}, rng), random_tensor({3}, rng)});
  return m;
}

}  // namespace

TEST(Activation, TreluCases) {
  const auto f = trelu(1.0);
  EXPECT_EQ(f(0.7), 0.7);
  EXPECT_EQ(f(-1.0), 0.0);
  EXPECT_EQ(f(3.0), 1.0);
}

TEST(Activation, StairsCases) {
  const auto f = stairs(4);
  EXPECT_EQ(f(0.3), 0.25);
  EXPECT_EQ(f(-0.5), 0.0);
  EXPECT_EQ(f(2.0), 1.0);
}

TEST(Activation, InvalidParametersRejected) {
  EXPECT_THROW(trelu(0.0).validate(), ArgumentError);
  EXPECT_THROW(stairs(0).validate(), ArgumentError);
  EXPECT_THROW(activation_kind_from_string("gelu"), ArgumentError);
}

TEST(Activation, OutputRanges) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int trial = 0; trial < 2000; ++trial) {
    const double x = u(rng);
    const std::size_t l = testing_support::pick(rng, 1, 9);
    const double a = 0.1 + std::abs(u(rng));
    EXPECT_GE(ActivationSpec{}(x), 0.0);
    const double tr = trelu(a)(x);
    EXPECT_GE(tr, 0.0);
    EXPECT_LE(tr, a);
    const double st = stairs(l)(x) * static_cast<double>(l);
    EXPECT_EQ(st, std::round(st));
    EXPECT_GE(st, 0.0);
    EXPECT_LE(st, static_cast<double>(l));
  }
}

TEST(ForwardCollect, IdentityLinearRelu) {
  AnnModel m{{2},
             {LinearLayer{identity(2), Tensor({2})}, ActivationLayer{{}, {}},
              LinearLayer{Tensor({1, 2}, {1, 1}), Tensor({1})}}};
  const auto r = forward_collect(m, Tensor({1, 2}, {-1, 2}));
  ASSERT_EQ(r.activations.size(), 1u);
  EXPECT_EQ(r.activations[0].values(), (std::vector<double>{0, 2}));
  EXPECT_EQ(r.logits.values(), (std::vector<double>{2}));
}

TEST(ForwardCollect, ZeroWeightsGiveZeroActivations) {
  AnnModel m = make_mlp({4}, {5, 3}, 2, 1);
  for (auto& l : m.layers)
    if (auto* lin = std::get_if<LinearLayer>(&l)) {
      lin->weight = Tensor(lin->weight.shape());
      lin->bias = Tensor(lin->bias.shape());
    }
  std::mt19937_64 rng(2);
  for (const auto& a : forward_collect(m, random_tensor({3, 4}, rng)).activations)
    for (double v : a.data()) EXPECT_EQ(v, 0.0);
}

TEST(ForwardCollect, IdenticalRowsAndRepeatCalls) {
  const AnnModel m = testing_support::tiny_cnn(4);
  std::mt19937_64 rng(9);
  const Tensor one = random_tensor({1, 1, 4, 4}, rng);
  std::vector<double> two = one.values();
  two.insert(two.end(), one.values().begin(), one.values().end());
  const Tensor batch({2, 1, 4, 4}, two);
  const auto r1 = forward_collect(m, batch);
  const auto r2 = forward_collect(m, batch);
  ASSERT_EQ(r1.activations.size(), 2u);
  for (std::size_t l = 0; l < r1.activations.size(); ++l) {
    EXPECT_EQ(r1.activations[l], r2.activations[l]);
    const std::size_t row = r1.activations[l].stride(0);
    for (std::size_t i = 0; i < row; ++i) EXPECT_EQ(r1.activations[l][i], r1.activations[l][row + i]);
  }
  EXPECT_EQ(r1.logits, r2.logits);
}

TEST(ForwardCollect, ShapeMismatchThrows) {
  const AnnModel m = make_mlp({4}, {3}, 2, 1);
  EXPECT_THROW(forward_collect(m, Tensor({2, 5})), DimensionError);
}

TEST(ForwardCollect, AgreesWithNaiveOracle) {
  std::mt19937_64 rng(41);
  const AnnModel m = bn_model(rng);
  const Tensor x = random_tensor({3, 2, 5, 5}, rng);
  const auto r = forward_collect(m, x);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto ref = oracle::ann_forward(m, oracle::sample_of(x, i));
    for (std::size_t l = 0; l < ref.activations.size(); ++l) {
      const std::size_t row = r.activations[l].stride(0);
      for (std::size_t k = 0; k < row; ++k) EXPECT_NEAR(r.activations[l][i * row + k], ref.activations[l][k], 1e-12);
    }
  }
}

TEST(Structure, ReadoutMustBeLinear) {
  AnnModel m{{2}, {LinearLayer{identity(2), Tensor({2})}, ActivationLayer{{}, {}}}};
  EXPECT_THROW(stages(m), StructureError);
  AnnModel two_weighted{{2},
                        {LinearLayer{identity(2), Tensor({2})}, LinearLayer{identity(2), Tensor({2})},
                         ActivationLayer{{}, {}}, LinearLayer{identity(2), Tensor({2})}}};
  EXPECT_THROW(stages(two_weighted), StructureError);
}

TEST(FoldBatchnorm, IdentityNormalizationIsNoOp) {
  AnnModel m{{2},
             {LinearLayer{Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2}, {0.5, -0.5})},
              BatchNormLayer{Tensor({2}, 1.0), Tensor({2}), Tensor({2}), Tensor({2}, 1.0), 0.0},
              ActivationLayer{{}, {}}, LinearLayer{identity(2), Tensor({2})}}};
  const AnnModel f = fold_batchnorm(m);
  ASSERT_EQ(f.layers.size(), 3u);
  const auto& lin = std::get<LinearLayer>(f.layers[0]);
  const auto& orig = std::get<LinearLayer>(m.layers[0]);
  EXPECT_LE(max_abs_diff(lin.weight, orig.weight), 1e-12);
  EXPECT_LE(max_abs_diff(lin.bias, orig.bias), 1e-12);
}

TEST(FoldBatchnorm, ScaleTwoDoublesWeights) {
  AnnModel m{{2},
             {LinearLayer{identity(2), Tensor({2})},
              BatchNormLayer{Tensor({2}, 2.0), Tensor({2}), Tensor({2}), Tensor({2}, 1.0), 0.0},
              ActivationLayer{{}, {}}, LinearLayer{identity(2), Tensor({2})}}};
  const AnnModel folded = fold_batchnorm(m);
  EXPECT_EQ(std::get<LinearLayer>(folded.layers[0]).weight, identity(2) * 2.0);
}

TEST(FoldBatchnorm, MisplacedBatchnormThrows) {
  AnnModel m{{2},
             {BatchNormLayer{Tensor({2}, 1.0), Tensor({2}), Tensor({2}), Tensor({2}, 1.0), 0.0},
              LinearLayer{identity(2), Tensor({2})}, ActivationLayer{{}, {}}, LinearLayer{identity(2), Tensor({2})}}};
  EXPECT_THROW(fold_batchnorm(m), StructureError);
}

TEST(FoldBatchnorm, PreservesForwardOnRandomModels) {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 100; ++trial) {
    const AnnModel m = bn_model(rng);
    const AnnModel f = fold_batchnorm(m);
    const Tensor x = random_tensor({2, 2, 5, 5}, rng);
    EXPECT_LE(max_abs_diff(forward(m, x), forward(f, x)), 1e-9);
  }
}

TEST(TrainSgd, SeparableBlobsReachHighAccuracy) {
  const Dataset d = synth_dataset(2, {6}, 200, 3, 6.0);
  const auto r = train_sgd(make_mlp({6}, {8}, 2, 3), d, {20, 0.05, 3, 16, 0.9});
  EXPECT_GE(r.train_accuracy, 0.95);
}

TEST(TrainSgd, ZeroLearningRateKeepsWeights) {
  const Dataset d = synth_dataset(3, {4}, 60, 5, 3.0);
  const AnnModel m = make_mlp({4}, {5}, 3, 5);
  EXPECT_EQ(train_sgd(m, d, {3, 0.0, 1, 8, 0.9}).model, m);
}

TEST(TrainSgd, SameSeedIsBitIdentical) {
  const Dataset d = synth_dataset(3, {1, 4, 4}, 48, 8, 3.0);
  const AnnModel m = testing_support::tiny_cnn(8);
  const TrainOptions opt{2, 0.05, 12, 8, 0.9};
  EXPECT_EQ(train_sgd(m, d, opt).model, train_sgd(m, d, opt).model);
}

TEST(TrainSgd, DivergenceRaisesTrainingError) {
  const Dataset d = synth_dataset(2, {4}, 40, 1, 3.0);
  EXPECT_THROW(train_sgd(make_mlp({4}, {4}, 2, 1), d, {50, 1e200, 1, 8, 0.9}), TrainingError);
}

TEST(Dataset, SynthIsDeterministicAndSeparable) {
  const Dataset a = synth_dataset(3, {5}, 90, 4, 10.0);
  const Dataset b = synth_dataset(3, {5}, 90, 4, 10.0);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.labels, b.labels);
  // nearest-mean classifier: means sit at (10 / sqrt 2) e_k
  const double r = 10.0 / std::sqrt(2.0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t k = 0; k < 3; ++k) {
      double dist = 0;
      for (std::size_t f = 0; f < 5; ++f) {
        const double m = f == k ? r : 0.0;
        dist += (a.inputs[i * 5 + f] - m) * (a.inputs[i * 5 + f] - m);
      }
      if (dist < best_d) best_d = dist, best = k;
    }
    hits += best == a.labels[i];
  }
  EXPECT_GE(static_cast<double>(hits) / static_cast<double>(a.size()), 0.99);
}

TEST(Dataset, ZeroSeparationIsChanceLevel) {
  const Dataset train = synth_dataset(4, {3}, 800, 6, 0.0);
  const Dataset test = synth_dataset(4, {3}, 2000, 7, 0.0, Split::test);
  const auto r = train_sgd(make_mlp({3}, {8}, 4, 6), train, {5, 0.05, 6, 32, 0.9});
  EXPECT_NEAR(accuracy(r.model, test), 0.25, 0.05);
}

TEST(Dataset, InvalidArgumentsRejected) {
  EXPECT_THROW(synth_dataset(1, {3}, 10, 0, 1.0), ArgumentError);
  EXPECT_THROW(synth_dataset(4, {3}, 3, 0, 1.0), ArgumentError);
}
