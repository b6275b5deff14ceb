#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedquant/data.hpp"
#include "fedquant/model.hpp"
#include "fedquant/strategies.hpp"

namespace fedquant {

struct ServerState;

// Bit-widths used at evaluation time. "W-4" quantizes weights only, "A-4"
// activations only, "WA-4/8" weights at 4 and activations at 8 bits.
struct BitConfig {
  std::optional<int> weight_bits;
  std::optional<int> act_bits;

  void validate() const;
  std::string label() const;
  static BitConfig parse(const std::string& label);
  static BitConfig weights(int bits) { return {bits, std::nullopt}; }

  friend bool operator==(const BitConfig&, const BitConfig&) = default;
};

// W-{32,8,6,4,3,2}.
std::vector<BitConfig> default_bit_configs();

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

// Top-1 accuracy (ties toward the lowest class index) and mean cross-entropy.
// act_specs empty means full-precision activations; otherwise one per layer.
EvalResult evaluate(const ParamSet& params, const std::vector<QuantSpec>& act_specs, const Dataset& data);

struct QuantizedModel {
  ParamSet params;
  std::vector<QuantSpec> weight_specs;  // one per layer (identity where unquantized)
  std::vector<QuantSpec> act_specs;     // empty when activations stay full precision
};

struct EvalOptions {
  bool exempt_first_last = false;  // keep first and last weight matrices at full precision
  int range_candidates = kDefaultRangeCandidates;
};

// QAT / MQAT reuse the training step tables (rescaling to missing bits);
// every other strategy gets a fresh MSE range search on the final weights.
QuantizedModel quantize_for_eval(const ServerState& state, const BitConfig& bc, const StrategyConfig& strat,
                                 const Batch* calib_batch, const EvalOptions& options = {});

struct EvalRow {
  std::string strategy;
  BitConfig bits;
  double accuracy = 0.0;
  double loss = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<std::string> warnings;
  std::uint64_t seed = 0;
  std::string config_hash;
  int rounds = 0;
  nlohmann::json config;  // effective configuration, embedded verbatim
};

EvalReport sweep(const ServerState& state, const StrategyConfig& strat, const std::vector<BitConfig>& configs,
                 const Dataset& data, const Batch* calib_batch, const EvalOptions& options = {});

// `strategy,weight_bits,act_bits,accuracy,loss`; missing bits are written as `-`.
void write_report_csv(const EvalReport& report, std::ostream& os);
nlohmann::json report_to_json(const EvalReport& report);

}  // namespace fedquant
