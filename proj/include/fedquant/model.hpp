#pragma once

#include <optional>
#include <span>
#include <vector>

#include "fedquant/quantizer.hpp"
#include "fedquant/rng.hpp"
#include "fedquant/tensor.hpp"

namespace fedquant {

struct Layer {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  friend bool operator==(const Layer&, const Layer&) = default;
};

// Parameters of a ReLU multilayer perceptron. Also used for gradients,
// deltas and optimizer moments, which share the same layout.
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(std::vector<Layer> layers);

  // Zero parameters for layer widths {in, h1, ..., out}.
  static ParamSet zeros(std::span<const std::size_t> widths);
  static ParamSet zeros_like(const ParamSet& other);

  std::size_t num_layers() const noexcept { return layers_.size(); }
  std::size_t total_dim() const noexcept { return total_dim_; }
  std::size_t input_dim() const { return layers_.front().weight.rows(); }
  std::size_t output_dim() const { return layers_.back().weight.cols(); }
  std::vector<std::size_t> widths() const;

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  Layer& layer(std::size_t i) { return layers_.at(i); }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }

  std::vector<double> flatten() const;
  // Inverse of flatten using this set's layout.
  ParamSet unflatten(std::span<const double> flat) const;

  bool same_layout(const ParamSet& other) const;
  bool all_finite() const;

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::vector<Layer> layers_;
  std::size_t total_dim_ = 0;
};

ParamSet add(const ParamSet& a, const ParamSet& b);
ParamSet sub(const ParamSet& a, const ParamSet& b);
ParamSet scale(const ParamSet& a, double s);
// a + s * b
ParamSet axpy(const ParamSet& a, double s, const ParamSet& b);
double squared_norm(const ParamSet& a);

// He-normal weights, zero biases.
ParamSet init_params(std::span<const std::size_t> widths, RngStream& rng);

struct Batch {
  Tensor inputs;            // [n x d]
  std::vector<int> labels;  // n entries in [0, num_classes)

  std::size_t size() const noexcept { return labels.size(); }
};

enum class WeightQuant { kNone, kQat, kApqn };
enum class ActQuant { kNone, kQat, kApqn };

// Where fake quantization or pseudo-noise is inserted. Activation entries are
// indexed by the consuming layer; entry 0 (raw network input) is never used.
struct QuantPlan {
  WeightQuant weight_mode = WeightQuant::kNone;
  std::vector<QuantSpec> weight_specs;   // per layer, kQat
  std::vector<double> weight_noise;      // per layer noise step, kApqn
  // If set, used instead of sampling APQN weight noise (one tensor per layer).
  std::optional<std::vector<Tensor>> frozen_weight_noise;

  ActQuant act_mode = ActQuant::kNone;
  std::vector<QuantSpec> act_specs;      // per layer, kQat
  std::vector<double> act_noise;         // per layer noise step, kApqn

  // Kurtosis penalty on post-ReLU activations; 0 disables.
  double act_kure_lambda = 0.0;
  double k_tau = 1.8;

  static QuantPlan none() { return {}; }
  static QuantPlan qat(std::vector<QuantSpec> weight_specs);
  static QuantPlan apqn(std::vector<double> noise_steps);

  // Throws ConfigError if the plan does not match `params`.
  void validate(const ParamSet& params) const;
};

// Everything backward needs. Holds copies, so it stays valid after the
// caller mutates its parameters.
struct ForwardCache {
  bool valid = false;
  std::vector<Tensor> shadow_weights;     // unquantized weights
  std::vector<Tensor> effective_weights;  // what the forward pass multiplied by
  std::vector<Tensor> pre_quant_inputs;   // layer inputs before activation quantization
  std::vector<Tensor> layer_inputs;       // layer inputs as used
  std::vector<Tensor> pre_activations;    // z = a W + b
  std::vector<Tensor> weight_noise;       // APQN noise actually added
  Tensor probs;                           // softmax output
  std::vector<int> labels;
  QuantPlan plan;
};

struct ForwardResult {
  // Mean softmax cross-entropy, plus the activation kurtosis penalty when enabled.
  double loss = 0.0;
  ForwardCache cache;
};

ForwardResult forward(const ParamSet& params, const Batch& batch, const QuantPlan& plan, RngStream& rng);
// Gradients w.r.t. the unquantized parameters (clipped STE through quantizers,
// APQN noise treated as a constant).
ParamSet backward(const ForwardCache& cache);

// Logits under the plan (no APQN noise is sampled; kApqn is treated as none).
Tensor predict_logits(const ParamSet& params, const Tensor& inputs, const QuantPlan& plan);
double cross_entropy(const Tensor& logits, std::span<const int> labels);

// Fourth standardized moment with population standard deviation.
double kurtosis(std::span<const double> w);
inline double kurtosis(const Tensor& w) { return kurtosis(w.data()); }
Tensor kurtosis_gradient(const Tensor& w);

// Mean over weight matrices of (K(W) - k_tau)^2. Biases excluded.
double kure_loss(const ParamSet& params, double k_tau);
ParamSet kure_gradient(const ParamSet& params, double k_tau);

}  // namespace fedquant
