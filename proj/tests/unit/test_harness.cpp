#include <gtest/gtest.h>

#include <random>

#include "ftbc/harness.hpp"
#include "ftbc/pipeline.hpp"
#include "../oracles/naive.hpp"
#include "../support.hpp"

using namespace ftbc;

namespace {

SnnModel biased_cnn(std::uint64_t seed, const Dataset& d) {
  SnnModel snn = build_snn(testing_support::tiny_cnn(seed), {}, d);
  std::mt19937_64 rng(seed);
  snn.bias.extend_horizon(3);
  for (std::size_t l = 0; l < snn.spiking_layers(); ++l)
    for (std::size_t t = 1; t <= 3; ++t)
      snn.bias.set(l, t, testing_support::random_tensor({snn.bias.channel_count(l)}, rng, -0.2, 0.2));
  return snn;
}

}  // namespace

TEST(ExpectedGap, MatchesNaiveResimulation) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Dataset d = testing_support::random_inputs({1, 4, 4}, 10, seed);
    const SnnModel snn = biased_cnn(seed, d);
    const std::size_t T = 6;
    const auto gap = expected_gap(snn.network, snn, d, T, 3);
    const auto ref = oracle::expected_gap(snn.network, snn, d.inputs, T);
    for (std::size_t l = 0; l < ref.size(); ++l)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < ref[l][t].size(); ++c) EXPECT_NEAR(gap[l][t][c], ref[l][t][c], 1e-9);
  }
}

TEST(ExpectedGap, PerfectlyCalibratedNeuronIsZero) {
  SnnModel m;
  m.network = AnnModel{{1}, {LinearLayer{Tensor({1, 1}, 1.0), Tensor({1})}, ActivationLayer{{}, {}}, LinearLayer{Tensor({1, 1}, 1.0), Tensor({1})}}};
  m.thresholds = {Tensor({1}, 1.0)};
  m.bias = BiasTable({1});
  // activations 1 and 0 are reproduced exactly at every step
  const Dataset d{Tensor({2, 1}, {1.0, 0.0}), {0, 0}, 1, Split::calib};
  const auto gap = expected_gap(m.network, m, d, 5);
  for (const auto& g : gap[0]) EXPECT_EQ(g[0], 0.0);
}

TEST(Histogram, ConstantInputIsOneBin) {
  SnnModel m;
  m.network = AnnModel{{1}, {LinearLayer{Tensor({1, 1}, 1.0), Tensor({1})}, ActivationLayer{{}, {}}, LinearLayer{Tensor({1, 1}, 1.0), Tensor({1})}}};
  m.thresholds = {Tensor({1}, 1.0)};
  m.bias = BiasTable({1});
  const Dataset d{Tensor({5, 1}, 0.3), {0, 0, 0, 0, 0}, 1, Split::test};
  const auto h = membrane_histogram(m, d, 0, 3, 10);
  EXPECT_EQ(h.total(), 5u);
  EXPECT_EQ(std::count_if(h.counts.begin(), h.counts.end(), [](std::size_t c) { return c > 0; }), 1);
}

TEST(Histogram, SingleBinCountsEverySample) {
  const Dataset d = testing_support::random_inputs({1, 4, 4}, 7, 2);
  const SnnModel snn = build_snn(testing_support::tiny_cnn(2), {}, d);
  const auto h = membrane_histogram(snn, d, 0, 2, 1, 1);
  ASSERT_EQ(h.counts.size(), 1u);
  EXPECT_EQ(h.counts[0], 7u * 16u);
}

TEST(Histogram, RejectsBadArguments) {
  const Dataset d = testing_support::random_inputs({1, 4, 4}, 3, 2);
  const SnnModel snn = build_snn(testing_support::tiny_cnn(2), {}, d);
  EXPECT_THROW(membrane_histogram(snn, d, 5, 1, 4), ArgumentError);
  EXPECT_THROW(membrane_histogram(snn, d, 0, 0, 4), ArgumentError);
  EXPECT_THROW(membrane_histogram(snn, d, 0, 1, 0), ArgumentError);
}

TEST(Histogram, DeskCnnMidLayerIsDiverse) {
  const auto dir = testing_support::digits_dir();
  const Dataset train = idx::load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
  const auto trained = train_sgd(make_desk_cnn(train.sample_shape(), train.classes, 3), train, {3, 0.02, 3, 32, 0.9});
  const Dataset calib = calibration_set(train, 256, 3);
  const SnnModel snn = build_snn(trained.model, {}, calib);
  for (std::size_t t : {4u, 16u}) {
    const auto v = membrane_samples(snn, calib, 1, t, 0);
    const auto h = make_histogram(v, 64);
    EXPECT_GE(interquartile_occupancy(v, h), 0.5) << "t " << t;
  }
}

TEST(Evaluate, DeterministicAndConsistentWithSimulate) {
  const Dataset d = testing_support::random_inputs({1, 4, 4}, 20, 5);
  const SnnModel snn = build_snn(testing_support::tiny_cnn(5), {}, d);
  const std::vector<std::size_t> ts{1, 3, 8};
  const auto a = evaluate(snn, d, ts, 7);
  EXPECT_EQ(a, evaluate(snn, d, ts, 20));
  const auto sim = simulate(snn, d.inputs, 8);
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const auto pred = argmax_rows(sim.readout[ts[k] - 1]);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < d.size(); ++i) hits += pred[i] == d.labels[i];
    EXPECT_EQ(a[k], static_cast<double>(hits) / 20.0);
  }
}

TEST(Evaluate, RejectsUnsortedTimesteps) {
  const Dataset d = testing_support::random_inputs({1, 4, 4}, 4, 5);
  const SnnModel snn = build_snn(testing_support::tiny_cnn(5), {}, d);
  EXPECT_THROW(evaluate(snn, d, {4, 2}), ArgumentError);
  EXPECT_THROW(evaluate(snn, d, {0}), ArgumentError);
}

TEST(Evaluate, UntrainedNetworkIsNearChance) {
  const Dataset d = synth_dataset(4, {8}, 400, 9, 3.0);
  const SnnModel snn = build_snn(make_mlp({8}, {16}, 4, 9), {}, d);
  for (double a : evaluate(snn, d, {32})) EXPECT_NEAR(a, 0.25, 0.1);
}

TEST(Prop1, SweepRowsMatchReferences) {
  const auto rows = prop1_sweep({"uniform", "triangular", "clipped_normal"}, {0.1, 0.5, 0.9}, 100000, 0.5, 200, 4);
  ASSERT_EQ(rows.size(), 9u);
  for (const auto& r : rows) {
    EXPECT_NEAR(r.achieved, r.target, 0.02) << r.distribution << " " << r.target;
    EXPECT_NEAR(r.b, r.reference, 0.05) << r.distribution << " " << r.target;
  }
  EXPECT_THROW(draw_samples("cauchy", 10, 1), ArgumentError);
}
