#include "fedquant/strategies.hpp"

#include <algorithm>
#include <cmath>

#include "fedquant/error.hpp"

namespace fedquant {

std::string to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::kBaseline: return "baseline";
    case StrategyKind::kKure: return "kure";
    case StrategyKind::kApqn: return "apqn";
    case StrategyKind::kQat: return "qat";
    case StrategyKind::kMqat: return "mqat";
  }
  return "?";
}

StrategyKind parse_strategy_kind(const std::string& name) {
  if (name == "baseline") return StrategyKind::kBaseline;
  if (name == "kure") return StrategyKind::kKure;
  if (name == "apqn") return StrategyKind::kApqn;
  if (name == "qat") return StrategyKind::kQat;
  if (name == "mqat") return StrategyKind::kMqat;
  throw ConfigError("unknown strategy '" + name + "'");
}

std::string to_string(MqatMode mode) { return mode == MqatMode::kPerRound ? "per_round" : "fixed_per_client"; }

MqatMode parse_mqat_mode(const std::string& name) {
  if (name == "per_round") return MqatMode::kPerRound;
  if (name == "fixed_per_client") return MqatMode::kFixedPerClient;
  throw ConfigError("unknown mqat_mode '" + name + "'");
}

bool is_strategy_bits(int bits) {
  return bits == 2 || bits == 3 || bits == 4 || bits == 6 || bits == 8 || bits == kFullPrecisionBits;
}

void StrategyConfig::validate() const {
  if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
  if ((kind == StrategyKind::kApqn || kind == StrategyKind::kQat) && !is_strategy_bits(train_bits)) {
    throw ConfigError("train_bits must be one of 2,3,4,6,8,32");
  }
  if (kind == StrategyKind::kApqn && train_bits == kFullPrecisionBits) {
    throw ConfigError("apqn needs a finite train_bits (noise amplitude comes from its step)");
  }
  if (kind == StrategyKind::kMqat) {
    if (bit_set.empty()) throw ConfigError("mqat needs a non-empty bit set");
    for (int b : bit_set)
      if (!is_strategy_bits(b)) throw ConfigError("bit_set members must be in {2,3,4,6,8,32}");
    if (!std::is_sorted(bit_set.begin(), bit_set.end()) ||
        std::adjacent_find(bit_set.begin(), bit_set.end()) != bit_set.end()) {
      throw ConfigError("bit_set must be strictly ascending");
    }
  }
  if (kind == StrategyKind::kMqat && !quantize_weights && !quantize_acts) {
    throw ConfigError("mqat must quantize weights or activations");
  }
}

bool StrategyConfig::quantizes_in_training() const {
  return kind == StrategyKind::kApqn || kind == StrategyKind::kQat || kind == StrategyKind::kMqat;
}

std::vector<int> StrategyConfig::calibration_bits() const {
  switch (kind) {
    case StrategyKind::kApqn:
    case StrategyKind::kQat: return {train_bits};
    case StrategyKind::kMqat: return bit_set;
    default: return {};
  }
}

// ---------------------------------------------------------------------------

std::vector<Tensor> layer_activations(const ParamSet& params, const Tensor& inputs, const QuantPlan& plan) {
  plan.validate(params);
  std::vector<Tensor> acts;
  Tensor h = inputs;
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    acts.push_back(h);
    if (l + 1 == params.num_layers()) break;
    const Tensor w = plan.weight_mode == WeightQuant::kQat ? quantize(params.layer(l).weight, plan.weight_specs[l])
                                                           : params.layer(l).weight;
    const Tensor a = (l > 0 && plan.act_mode == ActQuant::kQat) ? quantize(h, plan.act_specs[l]) : h;
    h = add_row(matmul(a, w), params.layer(l).bias);
    for (double& v : h.data()) v = v > 0.0 ? v : 0.0;
  }
  return acts;
}

ModelTables calibrate_steps(const ParamSet& params, std::span<const int> bit_set, const Batch* calib_batch,
                            bool quantize_acts) {
  std::vector<int> finite_bits;
  for (int b : bit_set) {
    if (!is_supported_bits(b)) throw ConfigError("unsupported bit-width " + std::to_string(b));
    if (b != kFullPrecisionBits) finite_bits.push_back(b);
  }
  ModelTables tables;
  if (finite_bits.empty()) return tables;
  const int anchor = *std::min_element(finite_bits.begin(), finite_bits.end());

  for (const Layer& l : params.layers()) {
    const RangeEstimate est = estimate_range_mse(l.weight, anchor, /*is_signed=*/true);
    tables.weights.emplace_back(est.spec, finite_bits);
  }
  if (quantize_acts) {
    if (!calib_batch || calib_batch->size() == 0) throw ConfigError("activation calibration needs a batch");
    const auto acts = layer_activations(params, calib_batch->inputs, QuantPlan::none());
    tables.acts.emplace_back();
    for (std::size_t l = 1; l < acts.size(); ++l) {
      const RangeEstimate est = estimate_range_mse(acts[l], anchor, /*is_signed=*/false);
      tables.acts.emplace_back(est.spec, finite_bits);
    }
  }
  return tables;
}

int sample_bitwidth(std::span<const int> bit_set, RngStream& rng) {
  if (bit_set.empty()) throw ConfigError("cannot sample from an empty bit set");
  return bit_set[static_cast<std::size_t>(rng.below(bit_set.size()))];
}

RngStream bit_stream(std::uint64_t seed, MqatMode mode, int round, int client) {
  if (mode == MqatMode::kFixedPerClient) {
    return RngStream(seed, {tag(Purpose::kFixedBit), static_cast<std::uint64_t>(client)});
  }
  return RngStream(seed, {static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(client), tag(Purpose::kBitSample)});
}

QuantPlan training_plan(const StrategyConfig& strat, const ModelTables& tables, int bits, std::size_t num_layers) {
  QuantPlan plan;
  if (strat.kind == StrategyKind::kKure && strat.act_kure) {
    plan.act_kure_lambda = strat.lambda;
    plan.k_tau = strat.k_tau;
  }
  if (!strat.quantizes_in_training()) return plan;

  const bool apqn = strat.kind == StrategyKind::kApqn;
  if (strat.quantize_weights) {
    if (tables.weights.size() != num_layers && bits != kFullPrecisionBits) {
      throw UsageError("step tables missing for quantized training");
    }
    if (apqn) {
      plan.weight_mode = WeightQuant::kApqn;
      for (std::size_t l = 0; l < num_layers; ++l) plan.weight_noise.push_back(tables.weights[l].step(bits));
    } else {
      plan.weight_mode = WeightQuant::kQat;
      for (std::size_t l = 0; l < num_layers; ++l) {
        plan.weight_specs.push_back(bits == kFullPrecisionBits ? QuantSpec::full_precision()
                                                              : tables.weights[l].spec(bits));
      }
    }
  }
  if (strat.quantize_acts) {
    if (tables.acts.size() != num_layers && bits != kFullPrecisionBits) {
      throw UsageError("activation step tables missing for quantized training");
    }
    if (apqn) {
      plan.act_mode = ActQuant::kApqn;
      plan.act_noise.push_back(0.0);
      for (std::size_t l = 1; l < num_layers; ++l) plan.act_noise.push_back(tables.acts[l].step(bits));
    } else {
      plan.act_mode = ActQuant::kQat;
      plan.act_specs.push_back(QuantSpec::full_precision(false));
      for (std::size_t l = 1; l < num_layers; ++l) {
        plan.act_specs.push_back(bits == kFullPrecisionBits ? QuantSpec::full_precision(false)
                                                           : tables.acts[l].spec(bits));
      }
    }
  }
  return plan;
}

void ClientTask::validate() const {
  if (!start_params || !tables || !data) throw UsageError("client task is missing inputs");
  if (local_steps < 1) throw ConfigError("local steps K must be >= 1");
  if (!(eta_c > 0.0)) throw ConfigError("client learning rate must be positive");
  if (indices.empty()) throw ConfigError("client " + std::to_string(client_id) + " has no data");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
}

ClientUpdate local_train(const ClientTask& task, const StrategyConfig& strat) {
  task.validate();
  strat.validate();
  const auto round = static_cast<std::uint64_t>(task.round);
  const auto client = static_cast<std::uint64_t>(task.client_id);

  ClientUpdate up;
  up.client_id = task.client_id;

  int bits = strat.train_bits;
  if (strat.kind == StrategyKind::kMqat) {
    RngStream rng = bit_stream(task.seed, strat.mqat_mode, task.round, task.client_id);
    bits = sample_bitwidth(strat.bit_set, rng);
    up.sampled_bit = bits;
  }
  const QuantPlan plan = training_plan(strat, *task.tables, bits, task.start_params->num_layers());

  RngStream batch_rng(task.seed, {round, client, tag(Purpose::kBatches)});
  const RngStream noise_base(task.seed, {round, client, tag(Purpose::kNoise)});
  std::vector<std::size_t> order(task.indices.begin(), task.indices.end());
  std::size_t cursor = order.size();

  const bool kure = strat.kind == StrategyKind::kKure && strat.lambda > 0.0;
  ParamSet w = *task.start_params;
  for (int k = 0; k < task.local_steps; ++k) {
    if (cursor >= order.size()) {
      batch_rng.shuffle(order);
      cursor = 0;
    }
    const std::size_t take = std::min(task.batch_size, order.size() - cursor);
    const Batch batch = make_batch(*task.data, std::span(order).subspan(cursor, take));
    cursor += take;

    RngStream noise = noise_base.child(static_cast<std::uint64_t>(k));
    try {
      ForwardResult fr = forward(w, batch, plan, noise);
      ParamSet g = backward(fr.cache);
      double loss = fr.loss;
      if (kure) {
        loss += strat.lambda * kure_loss(w, strat.k_tau);
        g = axpy(g, strat.lambda, kure_gradient(w, strat.k_tau));
      }
      if (!std::isfinite(loss)) throw NumericError("non-finite local loss");
      up.loss_trace.push_back(loss);
      up.grad_norms.push_back(std::sqrt(squared_norm(g)));
      w = axpy(w, -task.eta_c, g);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kNumeric) throw DivergedError(task.round, task.client_id, e.what());
      throw;
    }
  }
  up.delta = sub(w, *task.start_params);
  return up;
}

}  // namespace fedquant
