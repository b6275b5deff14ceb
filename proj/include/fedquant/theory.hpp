#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedquant/data.hpp"
#include "fedquant/model.hpp"
#include "fedquant/rng.hpp"

// Numeric side of the FedAvg convergence guarantee under quantization noise:
// the bound itself, its learning-rate conditions, and empirical checks of the
// assumptions it rests on. Nothing here feeds back into training.
namespace fedquant::theory {

enum class NoiseMethod { kApqn, kQat, kMqat };

std::string to_string(NoiseMethod m);
NoiseMethod parse_noise_method(const std::string& name);

// Per-coordinate noise radius: step/sqrt(12) for APQN, step/2 for QAT and
// max(step)/2 for MQAT.
double r_value(NoiseMethod method, const std::vector<double>& steps);

// eta_c <= 1/(10 L K) and eta_c <= 1/(8 L K eta_s).
bool check_conditions(double eta_c, double eta_s, int K, double L);

struct BoundInputs {
  double L = 1.0;
  double sigma_l = 0.0;
  double sigma_g = 0.0;
  double D = 1.0;
  int K = 1;
  double T = 1.0;
  double eta_c = 0.01;
  double eta_s = 1.0;
  NoiseMethod method = NoiseMethod::kQat;
  std::vector<double> steps;
  double gap = 1.0;  // F(w_1) - F(w*)

  void validate() const;
};

struct BoundReport {
  double A = 0.0, B = 0.0, Gamma = 0.0, H = 0.0, R = 0.0;
  bool conditions_ok = false;
  // Present only when the learning-rate conditions hold.
  std::optional<double> term_opt;
  std::optional<double> term_floor;
  std::optional<double> bound;

  nlohmann::json to_json() const;
};

BoundReport compute_bound(const BoundInputs& in);

struct NoiseStats {
  double mean_sq_norm = 0.0;  // mean over trials of ||r||^2
  double max_abs = 0.0;       // max |r_j| seen
  double D = 0.0;
  double R = 0.0;
  // Monte-Carlo slack on D R^2: four standard errors of the APQN estimate, 0
  // for the deterministic rounding methods.
  double epsilon = 0.0;
  bool pass = false;  // mean_sq_norm <= D R^2 (1 + epsilon) and max_abs <= c R
};

// `steps` maps bit-width to step. QAT and APQN use the single entry; MQAT
// draws a width uniformly per trial.
NoiseStats empirical_noise_bound(std::span<const double> w, NoiseMethod method, const std::map<int, double>& steps,
                                 int trials, RngStream rng);

// Gradient helpers over a partitioned dataset. The global objective is the
// unweighted mean of the client objectives.
ParamSet client_gradient(const ParamSet& params, const FederatedDataset& data, std::size_t client);
ParamSet global_gradient(const ParamSet& params, const FederatedDataset& data);
double global_loss(const ParamSet& params, const FederatedDataset& data);

struct ConstantEstimates {
  double L = 0.0;
  double sigma_l = 0.0;
  double sigma_g = 0.0;
};

// Sampled upper estimates of the smoothness and variance constants over
// `probes`, each inflated by `inflation`.
ConstantEstimates estimate_constants(const std::vector<ParamSet>& probes, const FederatedDataset& data,
                                     std::size_t batch_size, int batches_per_probe, RngStream rng,
                                     double inflation = 2.0);

struct DominanceSetup {
  std::uint64_t seed = 0;
  int num_classes = 5;
  int dim = 9;  // linear softmax model: dim * classes + classes parameters
  int samples_per_class = 40;
  double class_separation = 2.0;
  int num_clients = 5;
  double alpha = 1.0;
  int K = 5;
  int batch_size = 8;
  int rounds = 500;
  int train_bits = 4;
  double eta_s = 1.0;
  int probes = 16;
};

struct DominanceResult {
  ConstantEstimates constants;
  BoundInputs inputs;
  BoundReport report;
  double min_grad_sq = 0.0;
  double initial_loss = 0.0;
  bool dominated = false;  // min_t ||grad F(w_t)||^2 <= bound
};

// FedAvg-QAT with full participation and server SGD at condition-satisfying
// rates, then compares the observed minimum gradient norm with the bound.
DominanceResult empirical_bound_check(const DominanceSetup& setup);

}  // namespace fedquant::theory
