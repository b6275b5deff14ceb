#include "fedquant/evaluation.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "fedquant/error.hpp"
#include "fedquant/federation.hpp"

namespace fedquant {

void BitConfig::validate() const {
  if (!weight_bits && !act_bits) throw ConfigError("bit config quantizes nothing");
  if (weight_bits && !is_strategy_bits(*weight_bits)) throw ConfigError("weight bits must be in {2,3,4,6,8,32}");
  if (act_bits && !is_strategy_bits(*act_bits)) throw ConfigError("activation bits must be in {2,3,4,6,8,32}");
}

std::string BitConfig::label() const {
  if (weight_bits && act_bits) return "WA-" + std::to_string(*weight_bits) + "/" + std::to_string(*act_bits);
  if (weight_bits) return "W-" + std::to_string(*weight_bits);
  if (act_bits) return "A-" + std::to_string(*act_bits);
  return "none";
}

BitConfig BitConfig::parse(const std::string& label) {
  auto to_bits = [&](const std::string& s) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(s, &used);
    } catch (const std::exception&) {
      throw ConfigError("bad bit config '" + label + "'");
    }
    if (used != s.size()) throw ConfigError("bad bit config '" + label + "'");
    return v;
  };
  BitConfig bc;
  if (label.rfind("WA-", 0) == 0) {
    const std::string rest = label.substr(3);
    const auto slash = rest.find('/');
    if (slash == std::string::npos) throw ConfigError("bad bit config '" + label + "'");
    bc.weight_bits = to_bits(rest.substr(0, slash));
    bc.act_bits = to_bits(rest.substr(slash + 1));
  } else if (label.rfind("W-", 0) == 0) {
    bc.weight_bits = to_bits(label.substr(2));
  } else if (label.rfind("A-", 0) == 0) {
    bc.act_bits = to_bits(label.substr(2));
  } else {
    throw ConfigError("bad bit config '" + label + "' (expected W-b, A-b or WA-b/b)");
  }
  bc.validate();
  return bc;
}

std::vector<BitConfig> default_bit_configs() {
  std::vector<BitConfig> out;
  for (int b : {32, 8, 6, 4, 3, 2}) out.push_back(BitConfig::weights(b));
  return out;
}

EvalResult evaluate(const ParamSet& params, const std::vector<QuantSpec>& act_specs, const Dataset& data) {
  if (data.size() == 0) throw ConfigError("cannot evaluate on an empty dataset");
  QuantPlan plan;
  if (!act_specs.empty()) {
    plan.act_mode = ActQuant::kQat;
    plan.act_specs = act_specs;
  }
  const Tensor logits = predict_logits(params, data.inputs, plan);
  const std::size_t n = logits.rows(), c = logits.cols();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    if (static_cast<int>(best) == data.labels[i]) ++correct;
  }
  return {static_cast<double>(correct) / static_cast<double>(n), cross_entropy(logits, data.labels)};
}

QuantizedModel quantize_for_eval(const ServerState& state, const BitConfig& bc, const StrategyConfig& strat,
                                 const Batch* calib_batch, const EvalOptions& options) {
  bc.validate();
  const ParamSet& params = state.params;
  const std::size_t layers = params.num_layers();
  const bool reuse_tables = strat.kind == StrategyKind::kQat || strat.kind == StrategyKind::kMqat;

  QuantizedModel out;
  out.params = params;
  for (std::size_t l = 0; l < layers; ++l) {
    QuantSpec spec = QuantSpec::full_precision();
    const bool exempt = options.exempt_first_last && (l == 0 || l + 1 == layers);
    if (bc.weight_bits && *bc.weight_bits != kFullPrecisionBits && !exempt) {
      if (reuse_tables && state.tables.weights.size() == layers) {
        spec = state.tables.weights[l].spec(*bc.weight_bits);
      } else {
        spec = estimate_range_mse(params.layer(l).weight, *bc.weight_bits, true, options.range_candidates).spec;
      }
      out.params.layer(l).weight = quantize(params.layer(l).weight, spec);
    }
    out.weight_specs.push_back(spec);
  }

  if (bc.act_bits && *bc.act_bits != kFullPrecisionBits && layers > 1) {
    out.act_specs.push_back(QuantSpec::full_precision(false));
    if (reuse_tables && state.tables.acts.size() == layers) {
      for (std::size_t l = 1; l < layers; ++l) out.act_specs.push_back(state.tables.acts[l].spec(*bc.act_bits));
    } else {
      if (!calib_batch || calib_batch->size() == 0) throw ConfigError("activation quantization needs a calibration batch");
      const auto acts = layer_activations(out.params, calib_batch->inputs, QuantPlan::none());
      for (std::size_t l = 1; l < layers; ++l) {
        out.act_specs.push_back(estimate_range_mse(acts[l], *bc.act_bits, false, options.range_candidates).spec);
      }
    }
  }
  return out;
}

EvalReport sweep(const ServerState& state, const StrategyConfig& strat, const std::vector<BitConfig>& configs,
                 const Dataset& data, const Batch* calib_batch, const EvalOptions& options) {
  EvalReport report;
  report.rounds = state.round;
  std::vector<BitConfig> seen;
  for (const BitConfig& bc : configs) {
    if (std::find(seen.begin(), seen.end(), bc) != seen.end()) {
      report.warnings.push_back("duplicate bit config " + bc.label() + " ignored");
      continue;
    }
    seen.push_back(bc);
    const QuantizedModel qm = quantize_for_eval(state, bc, strat, calib_batch, options);
    const EvalResult r = evaluate(qm.params, qm.act_specs, data);
    report.rows.push_back({to_string(strat.kind), bc, r.accuracy, r.loss});
  }
  return report;
}

namespace {

std::string bits_cell(const std::optional<int>& b) { return b ? std::to_string(*b) : "-"; }

nlohmann::json bits_json(const std::optional<int>& b) { return b ? nlohmann::json(*b) : nlohmann::json(nullptr); }

}  // namespace

void write_report_csv(const EvalReport& report, std::ostream& os) {
  os << "strategy,weight_bits,act_bits,accuracy,loss\n";
  std::ostringstream line;
  for (const EvalRow& r : report.rows) {
    line.str("");
    line << std::setprecision(17) << r.strategy << ',' << bits_cell(r.bits.weight_bits) << ','
         << bits_cell(r.bits.act_bits) << ',' << r.accuracy << ',' << r.loss << '\n';
    os << line.str();
  }
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const EvalRow& r : report.rows) {
    rows.push_back({{"strategy", r.strategy},
                    {"config", r.bits.label()},
                    {"weight_bits", bits_json(r.bits.weight_bits)},
                    {"act_bits", bits_json(r.bits.act_bits)},
                    {"accuracy", r.accuracy},
                    {"loss", r.loss}});
  }
  return {{"rows", rows},
          {"warnings", report.warnings},
          {"metadata",
           {{"seed", report.seed}, {"config_hash", report.config_hash}, {"rounds", report.rounds},
            {"config", report.config}}}};
}

}  // namespace fedquant
