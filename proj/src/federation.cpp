#include "fedquant/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

#include "fedquant/error.hpp"
#include "fedquant/evaluation.hpp"

namespace fedquant {

std::string to_string(ServerOpt opt) { return opt == ServerOpt::kSgd ? "sgd" : "adam"; }

ServerOpt parse_server_opt(const std::string& name) {
  if (name == "sgd") return ServerOpt::kSgd;
  if (name == "adam") return ServerOpt::kAdam;
  throw ConfigError("unknown server optimizer '" + name + "'");
}

void FedConfig::validate() const {
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (num_clients < 1) throw ConfigError("num_clients must be >= 1");
  if (clients_per_round < 1 || clients_per_round > num_clients) {
    throw ConfigError("clients_per_round must be in [1, num_clients]");
  }
  if (!(eta_s > 0.0) || !(eta_c > 0.0)) throw ConfigError("learning rates must be positive");
  if (local_steps < 0) throw ConfigError("local_steps must be >= 0 (0 = one epoch)");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (calibration_size < 1) throw ConfigError("calibration_size must be >= 1");
  if (server_opt == ServerOpt::kAdam) {
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
      throw ConfigError("adam betas must lie in [0, 1)");
    }
  }
}

ServerState initial_state(const FedConfig& cfg, std::span<const std::size_t> widths) {
  ServerState s;
  RngStream rng(cfg.seed, {tag(Purpose::kInit)});
  s.params = init_params(widths, rng);
  if (cfg.server_opt == ServerOpt::kAdam) {
    s.adam_m = ParamSet::zeros_like(s.params);
    s.adam_v = ParamSet::zeros_like(s.params);
  }
  return s;
}

std::vector<int> sample_clients(int num_clients, int s, RngStream& rng) {
  if (s < 1 || s > num_clients) {
    throw ConfigError("cannot sample " + std::to_string(s) + " of " + std::to_string(num_clients) + " clients");
  }
  std::vector<int> ids(static_cast<std::size_t>(num_clients));
  for (int i = 0; i < num_clients; ++i) ids[static_cast<std::size_t>(i)] = i;
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < static_cast<std::size_t>(s); ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(ids.size() - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(static_cast<std::size_t>(s));
  std::sort(ids.begin(), ids.end());
  return ids;
}

ParamSet aggregate(const std::vector<ClientUpdate>& updates) {
  if (updates.empty()) throw AggregationError("no client updates");
  std::vector<const ClientUpdate*> order;
  for (const auto& u : updates) order.push_back(&u);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->client_id < b->client_id; });
  const ParamSet& first = order.front()->delta;
  std::vector<double> acc(first.total_dim(), 0.0);
  for (const ClientUpdate* u : order) {
    if (!u->delta.same_layout(first)) throw AggregationError("client " + std::to_string(u->client_id) + " delta shape");
    const auto flat = u->delta.flatten();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += flat[i];
  }
  const double n = static_cast<double>(updates.size());
  for (double& v : acc) v /= n;
  return first.unflatten(acc);
}

ServerState server_step(const ServerState& state, const ParamSet& delta, const FedConfig& cfg) {
  if (!delta.same_layout(state.params)) throw AggregationError("server delta does not match the model");
  ServerState next = state;
  try {
    if (cfg.server_opt == ServerOpt::kSgd) {
      next.params = axpy(state.params, cfg.eta_s, delta);
    } else {
      if (!state.adam_m || !state.adam_v) throw UsageError("adam server state lacks moments");
      const auto d = delta.flatten();
      auto m = state.adam_m->flatten();
      auto v = state.adam_v->flatten();
      auto w = state.params.flatten();
      const double t = static_cast<double>(state.round + 1);
      const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
      const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * d[i];
        v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * d[i] * d[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        w[i] += cfg.eta_s * mhat / (std::sqrt(vhat) + cfg.adam_eps);
      }
      next.params = state.params.unflatten(w);
      next.adam_m = state.params.unflatten(m);
      next.adam_v = state.params.unflatten(v);
    }
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kNumeric) throw DivergedError(state.round, -1, e.what());
    throw;
  }
  next.round = state.round + 1;
  return next;
}

int local_steps_for(const FedConfig& cfg, std::size_t shard_size) {
  if (cfg.local_steps > 0) return cfg.local_steps;
  const auto b = static_cast<std::size_t>(cfg.batch_size);
  return static_cast<int>(std::max<std::size_t>(1, (shard_size + b - 1) / b));
}

Batch calibration_batch(const FedConfig& cfg, const Dataset& train) {
  std::vector<std::size_t> idx(train.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  RngStream rng(cfg.seed, {tag(Purpose::kCalibration)});
  rng.shuffle(idx);
  idx.resize(std::min(idx.size(), static_cast<std::size_t>(cfg.calibration_size)));
  std::sort(idx.begin(), idx.end());
  return make_batch(train, idx);
}

namespace {

template <typename F>
void parallel_for(std::size_t n, int threads, F&& body) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) body(i);
    });
  }
}

}  // namespace

ServerState run_round(const ServerState& state, const FedConfig& cfg, const StrategyConfig& strat,
                      const FederatedDataset& data, int threads, double* mean_client_loss) {
  const auto t = static_cast<std::uint64_t>(state.round);
  RngStream sample_rng(cfg.seed, {t, tag(Purpose::kClientSample)});
  const std::vector<int> clients = sample_clients(cfg.num_clients, cfg.clients_per_round, sample_rng);

  std::vector<ClientUpdate> updates(clients.size());
  std::vector<std::exception_ptr> errors(clients.size());
  parallel_for(clients.size(), threads, [&](std::size_t slot) {
    try {
      const int id = clients[slot];
      const auto& shard = data.assignment.at(static_cast<std::size_t>(id));
      ClientTask task;
      task.client_id = id;
      task.round = state.round;
      task.start_params = &state.params;
      task.tables = &state.tables;
      task.local_steps = local_steps_for(cfg, shard.size());
      task.eta_c = cfg.eta_c;
      task.data = &data.train;
      task.indices = shard;
      task.batch_size = static_cast<std::size_t>(cfg.batch_size);
      task.seed = cfg.seed;
      updates[slot] = local_train(task, strat);
    } catch (...) {
      errors[slot] = std::current_exception();
    }
  });
  // Slots are in ascending client order, so the reported failure is deterministic.
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  if (mean_client_loss) {
    double s = 0.0;
    for (const auto& u : updates) s += u.loss_trace.back();
    *mean_client_loss = s / static_cast<double>(updates.size());
  }
  return server_step(state, aggregate(updates), cfg);
}

RunResult run(const FedConfig& cfg, const StrategyConfig& strat, const FederatedDataset& data,
              std::span<const std::size_t> widths, const RunOptions& options) {
  cfg.validate();
  return run_from(initial_state(cfg, widths), cfg, strat, data, options);
}

RunResult run_from(ServerState state, const FedConfig& cfg, const StrategyConfig& strat,
                   const FederatedDataset& data, const RunOptions& options) {
  cfg.validate();
  strat.validate();
  if (data.num_clients() != static_cast<std::size_t>(cfg.num_clients)) {
    throw ConfigError("dataset is partitioned for " + std::to_string(data.num_clients()) + " clients, config says " +
                      std::to_string(cfg.num_clients));
  }
  if (state.round == 0 && state.tables.empty() && strat.quantizes_in_training()) {
    const Batch calib = calibration_batch(cfg, data.train);
    const auto bits = strat.calibration_bits();
    state.tables = calibrate_steps(state.params, bits, &calib, strat.quantize_acts);
  }

  RunResult res;
  while (state.round < cfg.rounds) {
    double client_loss = 0.0;
    state = run_round(state, cfg, strat, data, options.threads, &client_loss);
    if (options.on_round) options.on_round(state);
    if (state.round % cfg.eval_every == 0 || state.round == cfg.rounds) {
      HistoryRow row;
      row.round = state.round;
      row.client_loss = client_loss;
      if (data.validation.size() > 0) {
        const EvalResult ev = evaluate(state.params, {}, data.validation);
        row.accuracy = ev.accuracy;
        row.loss = ev.loss;
      }
      res.history.push_back(row);
      if (options.on_eval) options.on_eval(row);
    }
  }
  res.state = std::move(state);
  return res;
}

}  // namespace fedquant
