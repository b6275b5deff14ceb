#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedquant/data.hpp"
#include "fedquant/model.hpp"
#include "fedquant/quantizer.hpp"
#include "fedquant/rng.hpp"

namespace fedquant {

enum class StrategyKind { kBaseline, kKure, kApqn, kQat, kMqat };
enum class MqatMode { kPerRound, kFixedPerClient };

std::string to_string(StrategyKind kind);
StrategyKind parse_strategy_kind(const std::string& name);
std::string to_string(MqatMode mode);
MqatMode parse_mqat_mode(const std::string& name);

// Bit-widths a strategy may train or be evaluated at.
bool is_strategy_bits(int bits);

struct StrategyConfig {
  StrategyKind kind = StrategyKind::kBaseline;
  double lambda = 0.0;  // KURE weight
  double k_tau = 1.8;   // KURE target kurtosis
  int train_bits = 8;   // APQN / QAT
  std::vector<int> bit_set{2, 3, 4, 6, 8, 32};  // MQAT, ascending
  MqatMode mqat_mode = MqatMode::kPerRound;
  bool quantize_weights = true;
  bool quantize_acts = false;
  bool act_kure = false;  // KURE additionally on post-ReLU activations

  void validate() const;
  bool quantizes_in_training() const;
  // Bits the shared step table must cover (empty for baseline/KURE).
  std::vector<int> calibration_bits() const;
};

// Per-tensor step tables shared with every client. Activation tables are
// indexed by consuming layer; entry 0 stays empty.
struct ModelTables {
  std::vector<StepTable> weights;
  std::vector<StepTable> acts;

  bool empty() const noexcept { return weights.empty() && acts.empty(); }
  friend bool operator==(const ModelTables&, const ModelTables&) = default;
};

// Smallest non-32 bit anchors the MSE range search; the rest are rescaled from it.
ModelTables calibrate_steps(const ParamSet& params, std::span<const int> bit_set, const Batch* calib_batch,
                            bool quantize_acts);

// Post-ReLU activations feeding each layer (entry 0 is the raw input) under
// a full-precision forward pass.
std::vector<Tensor> layer_activations(const ParamSet& params, const Tensor& inputs, const QuantPlan& plan);

int sample_bitwidth(std::span<const int> bit_set, RngStream& rng);
// Stream for the MQAT draw: (round, client) per round, (client) only for MQAT*.
RngStream bit_stream(std::uint64_t seed, MqatMode mode, int round, int client);

// Forward plan for training at `bits` under `strat` (bits ignored for
// baseline / KURE).
QuantPlan training_plan(const StrategyConfig& strat, const ModelTables& tables, int bits, std::size_t num_layers);

struct ClientTask {
  int client_id = 0;
  int round = 0;
  const ParamSet* start_params = nullptr;
  const ModelTables* tables = nullptr;
  int local_steps = 1;  // K
  double eta_c = 0.01;
  const Dataset* data = nullptr;
  std::span<const std::size_t> indices;  // the client's shard
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ClientUpdate {
  int client_id = 0;
  ParamSet delta;                     // w_{t,K} - w_{t,0}
  std::vector<double> loss_trace;     // one entry per local step
  std::vector<double> grad_norms;     // ||g_k|| per local step
  std::optional<int> sampled_bit;
};

ClientUpdate local_train(const ClientTask& task, const StrategyConfig& strat);

}  // namespace fedquant
