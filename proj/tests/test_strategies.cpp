#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "fedquant/error.hpp"
#include "fedquant/strategies.hpp"
#include "support.hpp"

using namespace fedquant;

namespace {

struct Fixture {
  FederatedDataset data = fqtest::tiny_federation(3);
  std::vector<std::size_t> widths{4, 6, 3};
  ParamSet params;
  Fixture() {
    RngStream rng(21, {tag(Purpose::kInit)});
    params = init_params(widths, rng);
  }

  ClientUpdate train(const StrategyConfig& strat, int K = 4, int client = 1, int round = 2, double lr = 0.1,
                     std::size_t batch = 5) const {
    const ModelTables tables = calibrate_steps(params, strat.calibration_bits(), nullptr, false);
    ClientTask t;
    t.client_id = client;
    t.round = round;
    t.start_params = &params;
    t.tables = &tables;
    t.local_steps = K;
    t.eta_c = lr;
    t.data = &data.train;
    t.indices = data.assignment[static_cast<std::size_t>(client)];
    t.batch_size = batch;
    t.seed = 77;
    return local_train(t, strat);
  }
};

StrategyConfig make(StrategyKind kind) {
  StrategyConfig s;
  s.kind = kind;
  return s;
}

}  // namespace

TEST(StrategyConfig, Validation) {
  StrategyConfig s = make(StrategyKind::kMqat);
  s.bit_set = {};
  EXPECT_THROW(s.validate(), Error);
  s.bit_set = {4, 2};
  EXPECT_THROW(s.validate(), Error);
  s.bit_set = {2, 5};
  EXPECT_THROW(s.validate(), Error);
  s.bit_set = {2, 4, 32};
  EXPECT_NO_THROW(s.validate());
  StrategyConfig a = make(StrategyKind::kApqn);
  a.train_bits = 32;
  EXPECT_THROW(a.validate(), Error);
  StrategyConfig k = make(StrategyKind::kKure);
  k.lambda = -1.0;
  EXPECT_THROW(k.validate(), Error);
}

TEST(StrategyNames, RoundTrip) {
  for (auto k : {StrategyKind::kBaseline, StrategyKind::kKure, StrategyKind::kApqn, StrategyKind::kQat, StrategyKind::kMqat})
    EXPECT_EQ(parse_strategy_kind(to_string(k)), k);
  EXPECT_EQ(parse_mqat_mode(to_string(MqatMode::kFixedPerClient)), MqatMode::kFixedPerClient);
  EXPECT_THROW(parse_strategy_kind("lsq"), Error);
}

TEST(LocalTrain, OneStepMatchesSgdOracle) {
  const Fixture f;
  const auto& shard = f.data.assignment[1];
  const ClientUpdate up = f.train(make(StrategyKind::kBaseline), 1, 1, 0, 0.1, shard.size());
  RngStream r(0, {});
  const ParamSet g = backward(forward(f.params, make_batch(f.data.train, shard), QuantPlan::none(), r).cache);
  const auto d = up.delta.flatten(), expect = scale(g, -0.1).flatten();
  ASSERT_EQ(d.size(), expect.size());
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(d[i], expect[i], 1e-12);
  EXPECT_EQ(up.loss_trace.size(), 1u);
}

TEST(LocalTrain, QatAtFullPrecisionIsBaseline) {
  const Fixture f;
  StrategyConfig q = make(StrategyKind::kQat);
  q.train_bits = 32;
  EXPECT_EQ(f.train(q).delta, f.train(make(StrategyKind::kBaseline)).delta);
}

TEST(LocalTrain, KureWithZeroLambdaIsBaseline) {
  const Fixture f;
  StrategyConfig k = make(StrategyKind::kKure);
  k.lambda = 0.0;
  EXPECT_EQ(f.train(k).delta, f.train(make(StrategyKind::kBaseline)).delta);
}

TEST(LocalTrain, SingletonMqatIsQat) {
  const Fixture f;
  for (int b : {2, 4, 8}) {
    StrategyConfig m = make(StrategyKind::kMqat), q = make(StrategyKind::kQat);
    m.bit_set = {b};
    q.train_bits = b;
    const ClientUpdate um = f.train(m), uq = f.train(q);
    EXPECT_EQ(um.delta, uq.delta) << b;
    EXPECT_EQ(um.sampled_bit, b);
  }
}

TEST(LocalTrain, KureChangesTheUpdate) {
  const Fixture f;
  StrategyConfig k = make(StrategyKind::kKure);
  k.lambda = 1.0;
  EXPECT_NE(f.train(k).delta, f.train(make(StrategyKind::kBaseline)).delta);
}

TEST(LocalTrain, TraceLengthAndTriangleInequality) {
  const Fixture f;
  for (auto kind : {StrategyKind::kBaseline, StrategyKind::kApqn, StrategyKind::kQat, StrategyKind::kMqat}) {
    StrategyConfig s = make(kind);
    s.train_bits = 4;
    const ClientUpdate up = f.train(s, 7);
    ASSERT_EQ(up.loss_trace.size(), 7u);
    double bound = 0.0;
    for (double g : up.grad_norms) bound += 0.1 * g;
    EXPECT_LE(std::sqrt(squared_norm(up.delta)), bound * (1 + 1e-12));
  }
}

TEST(LocalTrain, ShadowWeightsStayFullPrecision) {
  const Fixture f;
  StrategyConfig q = make(StrategyKind::kQat);
  q.train_bits = 2;
  const ClientUpdate up = f.train(q, 5);
  const ModelTables tables = calibrate_steps(f.params, q.calibration_bits(), nullptr, false);
  const ParamSet w = add(f.params, up.delta);
  int off_grid = 0;
  for (std::size_t l = 0; l < w.num_layers(); ++l) {
    const Tensor& wl = w.layer(l).weight;
    off_grid += wl != quantize(wl, tables.weights[l].spec(2));
  }
  EXPECT_GT(off_grid, 0);
}

TEST(LocalTrain, DeterministicAndClientSpecific) {
  const Fixture f;
  StrategyConfig a = make(StrategyKind::kApqn);
  a.train_bits = 4;
  EXPECT_EQ(f.train(a).delta, f.train(a).delta);
  EXPECT_NE(f.train(a, 4, 1, 2).delta, f.train(a, 4, 1, 3).delta);
}

TEST(LocalTrain, DivergenceCarriesRoundAndClient) {
  const Fixture f;
  try {
    f.train(make(StrategyKind::kBaseline), 50, 2, 9, 1e200);
    FAIL() << "expected divergence";
  } catch (const DivergedError& e) {
    EXPECT_EQ(e.round(), 9);
    EXPECT_EQ(e.client(), 2);
    EXPECT_EQ(e.kind(), ErrorKind::kDiverged);
  }
}

TEST(LocalTrain, InvalidTask) {
  const Fixture f;
  ClientTask t;
  EXPECT_THROW(local_train(t, make(StrategyKind::kBaseline)), Error);
}

TEST(SampleBitwidth, SingletonAndEmpty) {
  RngStream rng(1, {1});
  const std::vector<int> one{4};
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_bitwidth(one, rng), 4);
  EXPECT_THROW(sample_bitwidth(std::vector<int>{}, rng), Error);
}

TEST(SampleBitwidth, UniformFrequencies) {
  const std::vector<int> bits{2, 3, 4, 6, 8, 32};
  std::map<int, int> counts;
  const int n = 60000;
  for (int i = 0; i < n; ++i) {
    RngStream rng = bit_stream(5, MqatMode::kPerRound, i / 100, i % 100);
    ++counts[sample_bitwidth(bits, rng)];
  }
  for (int b : bits) EXPECT_NEAR(counts[b] / double(n), 1.0 / 6.0, 0.02) << b;
}

TEST(SampleBitwidth, FixedPerClientIgnoresRound) {
  const std::vector<int> bits{2, 3, 4, 6, 8, 32};
  for (int client : {0, 17, 63}) {
    RngStream r0 = bit_stream(5, MqatMode::kFixedPerClient, 0, client);
    RngStream r999 = bit_stream(5, MqatMode::kFixedPerClient, 999, client);
    EXPECT_EQ(sample_bitwidth(bits, r0), sample_bitwidth(bits, r999));
  }
}

TEST(SampleBitwidth, ClientsInOneRoundCanDiffer) {
  const std::vector<int> bits{2, 3, 4, 6, 8, 32};
  std::set<int> seen;
  for (int c = 0; c < 20; ++c) {
    RngStream r = bit_stream(5, MqatMode::kPerRound, 3, c);
    seen.insert(sample_bitwidth(bits, r));
  }
  EXPECT_GT(seen.size(), 1u);
}

TEST(CalibrateSteps, SingletonTableAndConsistency) {
  const Fixture f;
  const std::vector<int> one{8}, all{2, 3, 4, 6, 8, 32};
  const ModelTables t1 = calibrate_steps(f.params, one, nullptr, false);
  ASSERT_EQ(t1.weights.size(), f.params.num_layers());
  for (const auto& t : t1.weights) EXPECT_EQ(t.steps().size(), 1u);
  const ModelTables t6 = calibrate_steps(f.params, all, nullptr, false);
  for (const auto& t : t6.weights) {
    EXPECT_TRUE(t.consistent());
    EXPECT_EQ(t.anchor_bits(), 2);
    EXPECT_EQ(t.steps().size(), 5u);
  }
  EXPECT_EQ(calibrate_steps(f.params, all, nullptr, false), t6);
}

TEST(CalibrateSteps, ActivationTablesNeedABatch) {
  const Fixture f;
  const std::vector<int> bits{4, 8};
  EXPECT_THROW(calibrate_steps(f.params, bits, nullptr, true), Error);
  const Batch b = full_batch(f.data.train);
  const ModelTables t = calibrate_steps(f.params, bits, &b, true);
  ASSERT_EQ(t.acts.size(), f.params.num_layers());
  EXPECT_TRUE(t.acts[0].empty());
  EXPECT_FALSE(t.acts[1].is_signed());
  EXPECT_EQ(calibrate_steps(f.params, bits, &b, true), t);
}

TEST(TrainingPlan, ModesFollowStrategy) {
  const Fixture f;
  StrategyConfig q = make(StrategyKind::kQat);
  q.train_bits = 4;
  const ModelTables t = calibrate_steps(f.params, q.calibration_bits(), nullptr, false);
  const QuantPlan plan = training_plan(q, t, 4, f.params.num_layers());
  EXPECT_EQ(plan.weight_mode, WeightQuant::kQat);
  EXPECT_EQ(plan.weight_specs[0], t.weights[0].spec(4));
  EXPECT_EQ(training_plan(make(StrategyKind::kBaseline), {}, 8, 2).weight_mode, WeightQuant::kNone);
  StrategyConfig a = make(StrategyKind::kApqn);
  a.train_bits = 4;
  const QuantPlan ap = training_plan(a, t, 4, f.params.num_layers());
  EXPECT_EQ(ap.weight_mode, WeightQuant::kApqn);
  EXPECT_EQ(ap.weight_noise[1], t.weights[1].step(4));
}
