#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "fedquant/checkpoint.hpp"
#include "fedquant/error.hpp"
#include "fedquant/federation.hpp"
#include "support.hpp"

using namespace fedquant;

namespace {

ClientUpdate update_of(int id, ParamSet delta) {
  ClientUpdate u;
  u.client_id = id;
  u.delta = std::move(delta);
  return u;
}

FedConfig small_cfg(int clients, int per_round, int rounds) {
  FedConfig c;
  c.num_clients = clients;
  c.clients_per_round = per_round;
  c.rounds = rounds;
  c.eta_c = 0.1;
  c.eta_s = 1.0;
  c.batch_size = 4;
  c.seed = 13;
  c.eval_every = 1;
  c.calibration_size = 32;
  return c;
}

const std::vector<std::size_t> kWidths{4, 6, 3};

}  // namespace

TEST(SampleClients, AllWhenSEqualsN) {
  RngStream rng(1, {1});
  EXPECT_EQ(sample_clients(5, 5, rng), (std::vector<int>{0, 1, 2, 3, 4}));
  EXPECT_THROW(sample_clients(5, 6, rng), Error);
  EXPECT_THROW(sample_clients(5, 0, rng), Error);
}

TEST(SampleClients, SortedDistinctDeterministic) {
  RngStream a(9, {3, tag(Purpose::kClientSample)}), b(9, {3, tag(Purpose::kClientSample)});
  const auto s = sample_clients(100, 10, a);
  EXPECT_EQ(s, sample_clients(100, 10, b));
  EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
  EXPECT_EQ(std::adjacent_find(s.begin(), s.end()), s.end());
}

TEST(SampleClients, ParticipationFrequency) {
  std::vector<int> counts(100, 0);
  const int rounds = 100000;
  for (int t = 0; t < rounds; ++t) {
    RngStream rng(4, {static_cast<std::uint64_t>(t), tag(Purpose::kClientSample)});
    for (int c : sample_clients(100, 10, rng)) ++counts[static_cast<std::size_t>(c)];
  }
  for (int c : counts) EXPECT_NEAR(c / double(rounds), 0.1, 0.005);
}

TEST(Aggregate, Examples) {
  RngStream rng(2, {1});
  const ParamSet d = fqtest::random_params(kWidths, rng);
  EXPECT_EQ(aggregate({update_of(3, d)}), d);
  const ParamSet z = aggregate({update_of(0, d), update_of(1, scale(d, -1.0))});
  for (double x : z.flatten()) EXPECT_EQ(x, 0.0);
  EXPECT_THROW(aggregate({}), Error);
  const ParamSet other = fqtest::random_params({4, 5, 3}, rng);
  EXPECT_THROW(aggregate({update_of(0, d), update_of(1, other)}), Error);
}

TEST(Aggregate, MatchesScalarLoopAndIsOrderFree) {
  RngStream rng(3, {1});
  std::vector<ParamSet> ds;
  for (int i = 0; i < 3; ++i) ds.push_back(fqtest::random_params(kWidths, rng));
  const auto got = aggregate({update_of(2, ds[2]), update_of(0, ds[0]), update_of(1, ds[1])});
  const auto f0 = ds[0].flatten(), f1 = ds[1].flatten(), f2 = ds[2].flatten(), g = got.flatten();
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], (f0[i] + f1[i] + f2[i]) / 3.0, 1e-15);
  EXPECT_EQ(got, aggregate({update_of(0, ds[0]), update_of(1, ds[1]), update_of(2, ds[2])}));
}

TEST(Aggregate, Linearity) {
  RngStream rng(4, {1});
  std::vector<ClientUpdate> ups, scaled;
  for (int i = 0; i < 4; ++i) {
    const ParamSet d = fqtest::random_params(kWidths, rng);
    ups.push_back(update_of(i, d));
    scaled.push_back(update_of(i, scale(d, 0.5)));
  }
  EXPECT_EQ(aggregate(scaled), scale(aggregate(ups), 0.5));
}

TEST(ServerStep, Sgd) {
  FedConfig cfg = small_cfg(1, 1, 1);
  cfg.server_opt = ServerOpt::kSgd;
  ServerState s;
  s.params = ParamSet({{Tensor::matrix({{0.0, 0.0}}), Tensor::vector({0.0, 0.0})}});
  const ParamSet zero = ParamSet::zeros_like(s.params);
  EXPECT_EQ(server_step(s, zero, cfg).params, s.params);
  cfg.eta_s = 0.5;
  const ParamSet d({{Tensor::matrix({{2.0, -2.0}}), Tensor::vector({0.0, 0.0})}});
  const ServerState n = server_step(s, d, cfg);
  EXPECT_EQ(n.params.layer(0).weight, Tensor::matrix({{1.0, -1.0}}));
  EXPECT_EQ(n.round, 1);
}

TEST(ServerStep, AdamFirstStep) {
  FedConfig cfg = small_cfg(1, 1, 1);
  cfg.server_opt = ServerOpt::kAdam;
  cfg.eta_s = 0.3;
  cfg.adam_eps = 1e-3;
  const std::vector<std::size_t> w{2, 2};
  ServerState s = initial_state(cfg, w);
  ASSERT_TRUE(s.adam_m && s.adam_v);
  const std::vector<double> c{0.5, -0.25, 2.0, 1e-4, -3.0, 0.0};
  const ParamSet d = s.params.unflatten(c);
  const ServerState n = server_step(s, d, cfg);
  const auto before = s.params.flatten(), after = n.params.flatten();
  for (std::size_t i = 0; i < c.size(); ++i)
    EXPECT_NEAR(after[i] - before[i], 0.3 * c[i] / (std::abs(c[i]) + 1e-3), 1e-14) << i;
}

TEST(ServerStep, NonFiniteUpdateDiverges) {
  FedConfig cfg = small_cfg(1, 1, 1);
  cfg.server_opt = ServerOpt::kSgd;
  cfg.eta_s = 1e300;
  ServerState s;
  s.round = 4;
  s.params = ParamSet({{Tensor::matrix({{1e10}}), Tensor::vector({0.0})}});
  const ParamSet d({{Tensor::matrix({{1e10}}), Tensor::vector({0.0})}});
  try {
    server_step(s, d, cfg);
    FAIL();
  } catch (const DivergedError& e) {
    EXPECT_EQ(e.round(), 4);
    EXPECT_EQ(e.client(), -1);
  }
}

TEST(InitialState, MomentsOnlyForAdam) {
  FedConfig cfg = small_cfg(1, 1, 1);
  cfg.server_opt = ServerOpt::kSgd;
  EXPECT_FALSE(initial_state(cfg, kWidths).adam_m);
  cfg.server_opt = ServerOpt::kAdam;
  const ServerState s = initial_state(cfg, kWidths);
  EXPECT_TRUE(s.adam_m);
  for (double x : s.adam_v->flatten()) EXPECT_EQ(x, 0.0);
  EXPECT_EQ(initial_state(cfg, kWidths), s);
}

TEST(FedConfig, Validation) {
  FedConfig c = small_cfg(4, 5, 1);
  EXPECT_THROW(c.validate(), Error);
  c = small_cfg(4, 2, 0);
  EXPECT_THROW(c.validate(), Error);
  c = small_cfg(4, 2, 1);
  c.eta_c = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = small_cfg(4, 2, 1);
  c.adam_eps = 0.0;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_EQ(parse_server_opt("sgd"), ServerOpt::kSgd);
  EXPECT_THROW(parse_server_opt("lamb"), Error);
}

TEST(LocalSteps, EpochEmulation) {
  FedConfig c = small_cfg(1, 1, 1);
  c.batch_size = 32;
  c.local_steps = 0;
  EXPECT_EQ(local_steps_for(c, 40), 2);
  EXPECT_EQ(local_steps_for(c, 32), 1);
  EXPECT_EQ(local_steps_for(c, 1), 1);
  c.local_steps = 7;
  EXPECT_EQ(local_steps_for(c, 40), 7);
}

TEST(Run, SingleRoundMatchesHandComposition) {
  const FederatedDataset data = fqtest::tiny_federation(1);
  FedConfig cfg = small_cfg(1, 1, 1);
  cfg.local_steps = 1;
  cfg.batch_size = 1000;  // whole shard in one batch
  cfg.server_opt = ServerOpt::kSgd;
  cfg.eta_s = 0.7;
  const StrategyConfig strat;
  const RunResult res = run(cfg, strat, data, kWidths);

  const ServerState s0 = initial_state(cfg, kWidths);
  RngStream r(0, {});
  const ParamSet g = backward(forward(s0.params, make_batch(data.train, data.assignment[0]), QuantPlan::none(), r).cache);
  const auto expect = axpy(s0.params, -0.7 * 0.1, g).flatten(), got = res.state.params.flatten();
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-13);
  EXPECT_EQ(res.state.round, 1);
  ASSERT_EQ(res.history.size(), 1u);
}

TEST(Run, FullParticipationRoundIsUnionSgdStep) {
  const FederatedDataset data = fqtest::tiny_federation(4);
  FedConfig cfg = small_cfg(4, 4, 1);
  cfg.local_steps = 1;
  cfg.batch_size = 1000;
  cfg.server_opt = ServerOpt::kSgd;
  cfg.eta_s = 1.0;
  const RunResult res = run(cfg, StrategyConfig{}, data, kWidths);

  const ServerState s0 = initial_state(cfg, kWidths);
  ParamSet mean_grad = ParamSet::zeros_like(s0.params);
  for (const auto& shard : data.assignment) {
    RngStream r(0, {});
    mean_grad = axpy(mean_grad, 0.25, backward(forward(s0.params, make_batch(data.train, shard), QuantPlan::none(), r).cache));
  }
  const auto expect = axpy(s0.params, -0.1, mean_grad).flatten(), got = res.state.params.flatten();
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-12);
}

TEST(Run, ThreadCountDoesNotChangeResults) {
  const FederatedDataset data = fqtest::tiny_federation(6);
  FedConfig cfg = small_cfg(6, 4, 5);
  StrategyConfig strat;
  strat.kind = StrategyKind::kMqat;
  RunOptions one, four;
  four.threads = 4;
  const RunResult a = run(cfg, strat, data, kWidths, one), b = run(cfg, strat, data, kWidths, four);
  EXPECT_EQ(a.state, b.state);
  EXPECT_EQ(a.history, b.history);
}

TEST(Run, SeedChangesResults) {
  const FederatedDataset data = fqtest::tiny_federation(6);
  FedConfig cfg = small_cfg(6, 3, 3);
  const RunResult a = run(cfg, StrategyConfig{}, data, kWidths);
  cfg.seed = 14;
  EXPECT_NE(a.state.params, run(cfg, StrategyConfig{}, data, kWidths).state.params);
}

TEST(Run, CalibratesOnceForQuantizingStrategies) {
  const FederatedDataset data = fqtest::tiny_federation(3);
  FedConfig cfg = small_cfg(3, 2, 3);
  StrategyConfig strat;
  strat.kind = StrategyKind::kQat;
  strat.train_bits = 4;
  std::vector<ModelTables> seen;
  RunOptions opts;
  opts.on_round = [&](const ServerState& s) { seen.push_back(s.tables); };
  const RunResult res = run(cfg, strat, data, kWidths, opts);
  ASSERT_EQ(seen.size(), 3u);
  EXPECT_FALSE(seen[0].weights.empty());
  EXPECT_EQ(seen[0], seen[2]);
  EXPECT_TRUE(run(cfg, StrategyConfig{}, data, kWidths).state.tables.empty());
}

TEST(Run, HistoryScheduleAndRanges) {
  const FederatedDataset data = fqtest::tiny_federation(3);
  FedConfig cfg = small_cfg(3, 2, 7);
  cfg.eval_every = 3;
  const RunResult res = run(cfg, StrategyConfig{}, data, kWidths);
  ASSERT_EQ(res.history.size(), 3u);
  EXPECT_EQ(res.history[0].round, 3);
  EXPECT_EQ(res.history[1].round, 6);
  EXPECT_EQ(res.history[2].round, 7);
  for (const auto& h : res.history) {
    EXPECT_GE(h.accuracy, 0.0);
    EXPECT_LE(h.accuracy, 1.0);
  }
}

TEST(Run, LearnsSeparableData) {
  const FederatedDataset data = fqtest::tiny_federation(5, 8, 1.0, 60, 8.0, 4, 8);
  FedConfig cfg = small_cfg(5, 5, 200);
  cfg.eval_every = 200;
  cfg.batch_size = 16;
  cfg.eta_c = 0.05;
  cfg.eta_s = 0.01;
  const RunResult res = run(cfg, StrategyConfig{}, data, std::vector<std::size_t>{8, 16, 4});
  EXPECT_GE(res.history.back().accuracy, 0.95);
}

TEST(Run, ResumeFromCheckpointIsBitwise) {
  const FederatedDataset data = fqtest::tiny_federation(4);
  FedConfig cfg = small_cfg(4, 2, 6);
  StrategyConfig strat;
  strat.kind = StrategyKind::kMqat;
  const RunResult full = run(cfg, strat, data, kWidths);

  FedConfig half = cfg;
  half.rounds = 3;
  const RunResult first = run(half, strat, data, kWidths);
  const auto path = std::filesystem::temp_directory_path() / "fedquant_resume_ckpt.json";
  save_checkpoint({first.state, "abc", nlohmann::json::object()}, path);
  const Checkpoint loaded = load_checkpoint(path);
  std::filesystem::remove(path);
  EXPECT_EQ(loaded.state, first.state);
  const RunResult rest = run_from(loaded.state, cfg, strat, data);
  EXPECT_EQ(rest.state, full.state);
}

TEST(Run, PartitionMismatchRejected) {
  const FederatedDataset data = fqtest::tiny_federation(3);
  EXPECT_THROW(run(small_cfg(4, 2, 1), StrategyConfig{}, data, kWidths), Error);
}

TEST(Run, ClientDivergencePropagates) {
  const FederatedDataset data = fqtest::tiny_federation(3);
  FedConfig cfg = small_cfg(3, 3, 5);
  cfg.eta_c = 1e200;
  cfg.local_steps = 20;
  try {
    run(cfg, StrategyConfig{}, data, kWidths);
    FAIL();
  } catch (const DivergedError& e) {
    EXPECT_EQ(e.round(), 0);
    EXPECT_GE(e.client(), 0);
  }
}

TEST(CalibrationBatch, DeterministicSubset) {
  const FederatedDataset data = fqtest::tiny_federation(3);
  FedConfig cfg = small_cfg(3, 2, 1);
  cfg.calibration_size = 10;
  const Batch a = calibration_batch(cfg, data.train), b = calibration_batch(cfg, data.train);
  EXPECT_EQ(a.size(), 10u);
  EXPECT_EQ(a.inputs, b.inputs);
  cfg.calibration_size = 100000;
  EXPECT_EQ(calibration_batch(cfg, data.train).size(), data.train.size());
}

TEST(Checkpoint, RejectsBadMagicAndVersion) {
  nlohmann::json doc = {{"magic", "nope"}};
  EXPECT_THROW(checkpoint_from_json(doc), Error);
  const FederatedDataset data = fqtest::tiny_federation(2);
  const RunResult r = run(small_cfg(2, 2, 1), StrategyConfig{}, data, kWidths);
  nlohmann::json good = checkpoint_to_json({r.state, "h", nlohmann::json::object()});
  EXPECT_EQ(checkpoint_from_json(good).state, r.state);
  good["version"] = 99;
  EXPECT_THROW(checkpoint_from_json(good), Error);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.json"), Error);
}
