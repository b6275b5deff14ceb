#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedquant/data.hpp"
#include "fedquant/model.hpp"
#include "fedquant/rng.hpp"
#include "fedquant/strategies.hpp"

namespace fedquant {

enum class ServerOpt { kSgd, kAdam };

std::string to_string(ServerOpt opt);
ServerOpt parse_server_opt(const std::string& name);

struct FedConfig {
  int rounds = 1;             // T
  int clients_per_round = 1;  // |S|
  int num_clients = 1;
  double eta_s = 1.0;
  double eta_c = 0.01;
  int local_steps = 0;  // K; 0 means one local epoch, ceil(|shard| / batch_size)
  ServerOpt server_opt = ServerOpt::kAdam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  double adam_eps = 1e-3;
  int batch_size = 32;
  std::uint64_t seed = 0;
  int eval_every = 10;
  int calibration_size = 256;

  void validate() const;
};

struct ServerState {
  int round = 0;
  ParamSet params;
  std::optional<ParamSet> adam_m;
  std::optional<ParamSet> adam_v;
  ModelTables tables;

  friend bool operator==(const ServerState&, const ServerState&) = default;
};

// Initial state: He-initialised weights, zero moments when the optimizer is Adam.
ServerState initial_state(const FedConfig& cfg, std::span<const std::size_t> widths);

// `s` distinct ids drawn uniformly without replacement, returned sorted.
std::vector<int> sample_clients(int num_clients, int s, RngStream& rng);

// Unweighted mean of the client deltas, summed in ascending client-id order.
ParamSet aggregate(const std::vector<ClientUpdate>& updates);

ServerState server_step(const ServerState& state, const ParamSet& delta, const FedConfig& cfg);

// Local steps for a client shard of the given size.
int local_steps_for(const FedConfig& cfg, std::size_t shard_size);

// Server-held calibration batch: a deterministic subset of the training set.
Batch calibration_batch(const FedConfig& cfg, const Dataset& train);

struct HistoryRow {
  int round = 0;  // rounds completed
  double accuracy = 0.0;
  double loss = 0.0;
  double client_loss = 0.0;  // mean final local loss over the last round's clients

  friend bool operator==(const HistoryRow&, const HistoryRow&) = default;
};

struct RunOptions {
  int threads = 1;
  // Called after each history row is recorded.
  std::function<void(const HistoryRow&)> on_eval;
  // Called after every round with the new state (used by diagnostics).
  std::function<void(const ServerState&)> on_round;
};

struct RunResult {
  ServerState state;
  std::vector<HistoryRow> history;
};

// Runs rounds [state.round, cfg.rounds). Output depends only on the inputs,
// never on options.threads.
RunResult run(const FedConfig& cfg, const StrategyConfig& strat, const FederatedDataset& data,
              std::span<const std::size_t> widths, const RunOptions& options = {});
RunResult run_from(ServerState state, const FedConfig& cfg, const StrategyConfig& strat,
                   const FederatedDataset& data, const RunOptions& options = {});

// One round: sample, train clients (optionally in parallel), aggregate, step.
ServerState run_round(const ServerState& state, const FedConfig& cfg, const StrategyConfig& strat,
                      const FederatedDataset& data, int threads, double* mean_client_loss = nullptr);

}  // namespace fedquant
