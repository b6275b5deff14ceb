#pragma once

#include <map>
#include <span>
#include <vector>

#include "fedquant/rng.hpp"
#include "fedquant/tensor.hpp"

namespace fedquant {

inline constexpr int kFullPrecisionBits = 32;

// Bit-widths the quantizer can represent: 2..8, plus 32 meaning "no quantization".
bool is_supported_bits(int bits);

// Uniform symmetric (signed) or zero-based (unsigned) quantizer state.
// bits == 32 is the identity; its step is ignored.
struct QuantSpec {
  int bits = kFullPrecisionBits;
  double step = 1.0;
  long grid_min = 0;
  long grid_max = 0;
  bool is_signed = true;

  bool identity() const noexcept { return bits == kFullPrecisionBits; }
  // Largest representable magnitude on the positive side.
  double range_max() const noexcept { return static_cast<double>(grid_max) * step; }

  static QuantSpec full_precision(bool is_signed = true);

  friend bool operator==(const QuantSpec&, const QuantSpec&) = default;
};

// Builds a spec from an explicit step. Throws ConfigError on bad bits or step.
QuantSpec spec_from_step(double step, int bits, bool is_signed);

// Step chosen so the largest positive grid point equals range_max.
QuantSpec make_spec(double range_max, int bits, bool is_signed);

// Delta * clip(round(w / Delta), grid_min, grid_max), ties away from zero.
Tensor quantize(const Tensor& w, const QuantSpec& spec);
double quantize_scalar(double w, const QuantSpec& spec);

inline constexpr int kDefaultRangeCandidates = 100;

struct RangeEstimate {
  QuantSpec spec;
  double sse = 0.0;            // sum of squared quantization error at the chosen range
  bool all_zero = false;       // input was identically zero; a unit range was used
};

// Grid search over range candidates (j / n) * max|w|, j = 1..n, minimising
// the squared quantization error. Ties go to the larger range.
RangeEstimate estimate_range_mse(std::span<const double> w, int bits, bool is_signed,
                                 int num_candidates = kDefaultRangeCandidates);
inline RangeEstimate estimate_range_mse(const Tensor& w, int bits, bool is_signed,
                                        int num_candidates = kDefaultRangeCandidates) {
  return estimate_range_mse(w.data(), bits, is_signed, num_candidates);
}

// Step for bit-width a given the step at bit-width b, keeping the grid span
// (2^b - 1) * step_b fixed.
double rescale_step(double step_b, int b, int a);

// Elementwise i.i.d. U[-step/2, step/2] noise.
Tensor uniform_noise(const Tensor::Shape& shape, double step, RngStream& rng);
// w + U[-step/2, step/2], no clipping.
Tensor pseudo_quantize(const Tensor& w, double step, RngStream& rng);

// Clipped straight-through estimator: gradient passes where w / step lies in
// [grid_min, grid_max] and is zeroed elsewhere.
Tensor ste_backward(const Tensor& grad_out, const Tensor& w, const QuantSpec& spec);

// Steps for one tensor at several bit-widths, all sharing one grid span.
class StepTable {
 public:
  StepTable() = default;
  // Anchors the table at `anchor` and fills every non-32 bit in `bits` via rescale_step.
  StepTable(const QuantSpec& anchor, std::span<const int> bits);

  bool is_signed() const noexcept { return is_signed_; }
  bool empty() const noexcept { return steps_.empty(); }
  bool contains(int bits) const { return bits == kFullPrecisionBits || steps_.contains(bits); }
  const std::map<int, double>& steps() const noexcept { return steps_; }
  int anchor_bits() const noexcept { return anchor_bits_; }

  // Spec at `bits`; missing widths are derived from the anchor by rescale_step.
  QuantSpec spec(int bits) const;
  double step(int bits) const { return spec(bits).step; }

  // Every pair satisfies step_a (2^a - 1) == step_b (2^b - 1) within rel_tol.
  bool consistent(double rel_tol = 1e-12) const;

  // Raw constructor used by checkpoint loading.
  static StepTable from_steps(std::map<int, double> steps, int anchor_bits, bool is_signed);

  friend bool operator==(const StepTable&, const StepTable&) = default;

 private:
  std::map<int, double> steps_;
  int anchor_bits_ = 0;
  bool is_signed_ = true;
};

}  // namespace fedquant
