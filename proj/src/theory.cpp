#include "fedquant/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fedquant/error.hpp"
#include "fedquant/federation.hpp"
#include "fedquant/quantizer.hpp"

namespace fedquant::theory {

std::string to_string(NoiseMethod m) {
  switch (m) {
    case NoiseMethod::kApqn: return "apqn";
    case NoiseMethod::kQat: return "qat";
    case NoiseMethod::kMqat: return "mqat";
  }
  return "?";
}

NoiseMethod parse_noise_method(const std::string& name) {
  if (name == "apqn") return NoiseMethod::kApqn;
  if (name == "qat") return NoiseMethod::kQat;
  if (name == "mqat") return NoiseMethod::kMqat;
  throw ConfigError("unknown method '" + name + "' (expected apqn, qat or mqat)");
}

double r_value(NoiseMethod method, const std::vector<double>& steps) {
  if (steps.empty()) throw ConfigError("r_value needs at least one step size");
  for (double s : steps)
    if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("step sizes must be non-negative");
  switch (method) {
    case NoiseMethod::kApqn: return steps.front() / std::sqrt(12.0);
    case NoiseMethod::kQat: return steps.front() / 2.0;
    case NoiseMethod::kMqat: return *std::max_element(steps.begin(), steps.end()) / 2.0;
  }
  return 0.0;
}

bool check_conditions(double eta_c, double eta_s, int K, double L) {
  const double k = static_cast<double>(K);
  return eta_c <= 1.0 / (10.0 * L * k) && eta_c <= 1.0 / (8.0 * L * k * eta_s);
}

void BoundInputs::validate() const {
  if (!(L > 0.0) || !(D > 0.0) || K < 1 || !(T > 0.0) || !(eta_c > 0.0) || !(eta_s > 0.0)) {
    throw ConfigError("L, D, K, T and both learning rates must be positive");
  }
  if (sigma_l < 0.0 || sigma_g < 0.0 || gap < 0.0) throw ConfigError("variances and the optimality gap must be >= 0");
  if (steps.empty()) throw ConfigError("at least one step size is required");
  if (method != NoiseMethod::kMqat && steps.size() != 1) throw ConfigError("apqn and qat take exactly one step size");
}

BoundReport compute_bound(const BoundInputs& in) {
  in.validate();
  const double L = in.L, K = static_cast<double>(in.K), es = in.eta_s, ec = in.eta_c;
  BoundReport r;
  r.A = K / 4.0 - 2.0 * L * es * ec * K * K;
  r.B = 4.0 * es * ec * K * K * L * L + L * es * es * (2.0 * K * K + K / 6.0);
  r.Gamma = 24.0 * es * ec * K * K * L * L + L * es * es * K;
  r.H = (4.0 * es / (3.0 * ec)) * K + 6.0 * L * es * es * K * K;
  r.R = r_value(in.method, in.steps);
  r.conditions_ok = check_conditions(ec, es, in.K, L);
  if (!r.conditions_ok) return r;
  if (!(r.A > 0.0)) throw ConfigError("A = K/4 - 2 L eta_s eta_c K^2 must be positive");

  const double sl2 = in.sigma_l * in.sigma_l, sg2 = in.sigma_g * in.sigma_g;
  r.term_opt = in.gap / (in.T * es * ec * r.A);
  r.term_floor = ec / (es * r.A) * (r.B * sl2 + r.Gamma * K * sg2 + r.H * L * L * in.D * r.R * r.R);
  r.bound = *r.term_opt + *r.term_floor;
  return r;
}

nlohmann::json BoundReport::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"A", A},
          {"B", B},
          {"Gamma", Gamma},
          {"H", H},
          {"R", R},
          {"conditions_ok", conditions_ok},
          {"term_opt", opt(term_opt)},
          {"term_floor", opt(term_floor)},
          {"bound", opt(bound)}};
}

NoiseStats empirical_noise_bound(std::span<const double> w, NoiseMethod method, const std::map<int, double>& steps,
                                 int trials, RngStream rng) {
  if (trials < 1) throw ConfigError("need at least one trial");
  if (steps.empty()) throw ConfigError("need at least one step size");
  if (method != NoiseMethod::kMqat && steps.size() != 1) throw ConfigError("apqn and qat take exactly one step size");
  std::vector<double> step_list;
  for (const auto& [b, s] : steps) step_list.push_back(s);

  NoiseStats st;
  st.D = static_cast<double>(w.size());
  st.R = r_value(method, step_list);
  const double c = method == NoiseMethod::kApqn ? 2.0 : 1.0;

  std::vector<int> bits;
  for (const auto& [b, s] : steps) bits.push_back(b);
  double total = 0.0;
  for (int t = 0; t < trials; ++t) {
    double sq = 0.0;
    if (method == NoiseMethod::kApqn) {
      const double step = step_list.front();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double r = (rng.uniform() - 0.5) * step;
        sq += r * r;
        st.max_abs = std::max(st.max_abs, std::abs(r));
      }
    } else {
      const int b = method == NoiseMethod::kMqat ? bits[static_cast<std::size_t>(rng.below(bits.size()))] : bits.front();
      const QuantSpec spec = spec_from_step(steps.at(b), b, true);
      for (double v : w) {
        const double r = quantize_scalar(v, spec) - v;
        sq += r * r;
        st.max_abs = std::max(st.max_abs, std::abs(r));
      }
    }
    total += sq;
  }
  st.mean_sq_norm = total / trials;
  if (method == NoiseMethod::kApqn) {
    // Var(r^2) = 4 a^4 / 45 for r ~ U[-a, a]; relative standard error of the mean of ||r||^2.
    st.epsilon = 4.0 * std::sqrt(0.8 / (st.D * trials));
  }
  st.pass = st.mean_sq_norm <= st.D * st.R * st.R * (1.0 + st.epsilon) && st.max_abs <= c * st.R;
  return st;
}

// ---------------------------------------------------------------------------

ParamSet client_gradient(const ParamSet& params, const FederatedDataset& data, std::size_t client) {
  const Batch b = make_batch(data.train, data.assignment.at(client));
  RngStream unused(0, {});
  return backward(forward(params, b, QuantPlan::none(), unused).cache);
}

ParamSet global_gradient(const ParamSet& params, const FederatedDataset& data) {
  std::vector<double> acc(params.total_dim(), 0.0);
  for (std::size_t s = 0; s < data.num_clients(); ++s) {
    const auto g = client_gradient(params, data, s).flatten();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
  }
  for (double& v : acc) v /= static_cast<double>(data.num_clients());
  return params.unflatten(acc);
}

double global_loss(const ParamSet& params, const FederatedDataset& data) {
  double acc = 0.0;
  RngStream unused(0, {});
  for (std::size_t s = 0; s < data.num_clients(); ++s) {
    acc += forward(params, make_batch(data.train, data.assignment.at(s)), QuantPlan::none(), unused).loss;
  }
  return acc / static_cast<double>(data.num_clients());
}

namespace {

double dist_sq(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

ConstantEstimates estimate_constants(const std::vector<ParamSet>& probes, const FederatedDataset& data,
                                     std::size_t batch_size, int batches_per_probe, RngStream rng, double inflation) {
  if (probes.empty()) throw ConfigError("need at least one probe point");
  const std::size_t clients = data.num_clients();
  double L = 0.0, sl2 = 0.0, sg2 = 0.0;
  RngStream perturb = rng.child(0);
  RngStream batches = rng.child(1);

  for (const ParamSet& p : probes) {
    std::vector<std::vector<double>> grads(clients);
    std::vector<double> mean(p.total_dim(), 0.0);
    for (std::size_t s = 0; s < clients; ++s) {
      grads[s] = client_gradient(p, data, s).flatten();
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += grads[s][i] / static_cast<double>(clients);
    }

    // Global variance at this point.
    double g = 0.0;
    for (std::size_t s = 0; s < clients; ++s) g += dist_sq(grads[s], mean);
    sg2 = std::max(sg2, g / static_cast<double>(clients));

    // Smoothness: gradient differences along random directions at several radii.
    const auto base = p.flatten();
    for (double radius : {1e-3, 1e-1, 1.0}) {
      std::vector<double> dir(base.size());
      double norm = 0.0;
      for (double& v : dir) norm += (v = perturb.normal()) * v;
      norm = std::sqrt(norm);
      std::vector<double> moved(base);
      for (std::size_t i = 0; i < base.size(); ++i) moved[i] += radius * dir[i] / norm;
      const ParamSet q = p.unflatten(moved);
      for (std::size_t s = 0; s < clients; ++s) {
        const auto gq = client_gradient(q, data, s).flatten();
        L = std::max(L, std::sqrt(dist_sq(gq, grads[s])) / radius);
      }
    }

    // Local variance: mini-batch gradients against the client's full gradient.
    for (std::size_t s = 0; s < clients; ++s) {
      const auto& shard = data.assignment[s];
      double acc = 0.0;
      for (int m = 0; m < batches_per_probe; ++m) {
        std::vector<std::size_t> idx(shard.begin(), shard.end());
        batches.shuffle(idx);
        idx.resize(std::min(idx.size(), batch_size));
        RngStream unused(0, {});
        const auto gb = backward(forward(p, make_batch(data.train, idx), QuantPlan::none(), unused).cache).flatten();
        acc += dist_sq(gb, grads[s]);
      }
      sl2 = std::max(sl2, acc / batches_per_probe);
    }
  }
  ConstantEstimates est;
  est.L = inflation * L;
  est.sigma_l = std::sqrt(inflation * sl2);
  est.sigma_g = std::sqrt(inflation * sg2);
  return est;
}

DominanceResult empirical_bound_check(const DominanceSetup& setup) {
  SyntheticParams sp{setup.num_classes, setup.dim, setup.samples_per_class, setup.class_separation};
  const SplitDataset split = gen_synthetic(sp, RngStream(setup.seed, {tag(Purpose::kData)}));
  FederatedDataset data;
  data.train = split.train;
  data.validation = split.validation;
  data.alpha = setup.alpha;
  data.assignment = dirichlet_partition(split.train.labels, setup.num_classes, setup.num_clients, setup.alpha,
                                        RngStream(setup.seed, {tag(Purpose::kPartition)}));

  const std::vector<std::size_t> widths{static_cast<std::size_t>(setup.dim), static_cast<std::size_t>(setup.num_classes)};
  FedConfig cfg;
  cfg.seed = setup.seed;
  cfg.rounds = setup.rounds;
  cfg.num_clients = setup.num_clients;
  cfg.clients_per_round = setup.num_clients;
  cfg.server_opt = ServerOpt::kSgd;
  cfg.eta_s = setup.eta_s;
  cfg.local_steps = setup.K;
  cfg.batch_size = setup.batch_size;
  cfg.eval_every = setup.rounds;

  ServerState state = initial_state(cfg, widths);

  std::vector<ParamSet> probes{state.params};
  RngStream probe_rng(setup.seed, {tag(Purpose::kTheory), 0});
  for (int i = 1; i < setup.probes; ++i) {
    auto flat = state.params.flatten();
    for (double& v : flat) v += probe_rng.normal();
    probes.push_back(state.params.unflatten(flat));
  }
  DominanceResult res;
  res.constants = estimate_constants(probes, data, static_cast<std::size_t>(setup.batch_size), 8,
                                     RngStream(setup.seed, {tag(Purpose::kTheory), 1}));
  const double L = res.constants.L;
  const double k = static_cast<double>(setup.K);
  cfg.eta_c = std::min(1.0 / (10.0 * L * k), 1.0 / (8.0 * L * k * cfg.eta_s));

  StrategyConfig strat;
  strat.kind = StrategyKind::kQat;
  strat.train_bits = setup.train_bits;

  res.initial_loss = global_loss(state.params, data);
  double min_grad = std::numeric_limits<double>::infinity();
  auto track = [&](const ParamSet& p) { min_grad = std::min(min_grad, squared_norm(global_gradient(p, data))); };
  track(state.params);  // w_1 in the bound's indexing

  RunOptions opts;
  opts.on_round = [&](const ServerState& s) {
    if (s.round < setup.rounds) track(s.params);
  };
  const RunResult run_res = run_from(state, cfg, strat, data, opts);
  res.min_grad_sq = min_grad;

  double max_step = 0.0;
  for (const StepTable& t : run_res.state.tables.weights) max_step = std::max(max_step, t.step(setup.train_bits));

  BoundInputs& in = res.inputs;
  in.L = L;
  in.sigma_l = res.constants.sigma_l;
  in.sigma_g = res.constants.sigma_g;
  in.D = static_cast<double>(state.params.total_dim());
  in.K = setup.K;
  in.T = setup.rounds;
  in.eta_c = cfg.eta_c;
  in.eta_s = cfg.eta_s;
  in.method = NoiseMethod::kQat;
  in.steps = {max_step};
  in.gap = res.initial_loss;  // F* >= 0 for cross-entropy
  res.report = compute_bound(in);
  res.dominated = res.report.bound && res.min_grad_sq <= *res.report.bound;
  return res;
}

}  // namespace fedquant::theory
