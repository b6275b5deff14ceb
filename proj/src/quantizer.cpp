#include "fedquant/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedquant/error.hpp"

namespace fedquant {

namespace {

double levels(int bits) { return std::ldexp(1.0, bits) - 1.0; }

void require_quantizing_bits(int bits, const char* where) {
  if (bits == kFullPrecisionBits || !is_supported_bits(bits)) {
    throw ConfigError(std::string(where) + ": bit-width " + std::to_string(bits) + " has no step");
  }
}

}  // namespace

bool is_supported_bits(int bits) { return (bits >= 2 && bits <= 8) || bits == kFullPrecisionBits; }

QuantSpec QuantSpec::full_precision(bool is_signed) {
  QuantSpec s;
  s.is_signed = is_signed;
  return s;
}

QuantSpec spec_from_step(double step, int bits, bool is_signed) {
  if (!is_supported_bits(bits)) throw ConfigError("unsupported bit-width " + std::to_string(bits));
  if (bits == kFullPrecisionBits) return QuantSpec::full_precision(is_signed);
  if (!(step > 0.0) || !std::isfinite(step)) throw ConfigError("quantization step must be positive and finite");
  QuantSpec s;
  s.bits = bits;
  s.step = step;
  s.is_signed = is_signed;
  if (is_signed) {
    s.grid_min = -(1L << (bits - 1));
    s.grid_max = (1L << (bits - 1)) - 1;
  } else {
    s.grid_min = 0;
    s.grid_max = (1L << bits) - 1;
  }
  return s;
}

QuantSpec make_spec(double range_max, int bits, bool is_signed) {
  if (!is_supported_bits(bits)) throw ConfigError("unsupported bit-width " + std::to_string(bits));
  if (bits == kFullPrecisionBits) return QuantSpec::full_precision(is_signed);
  if (!(range_max > 0.0) || !std::isfinite(range_max)) throw ConfigError("range_max must be positive and finite");
  const double top = is_signed ? std::ldexp(1.0, bits - 1) - 1.0 : levels(bits);
  return spec_from_step(range_max / top, bits, is_signed);
}

double quantize_scalar(double w, const QuantSpec& spec) {
  if (!std::isfinite(w)) throw NumericError("quantize: non-finite input");
  if (spec.identity()) return w;
  const double k = std::clamp(std::round(w / spec.step), static_cast<double>(spec.grid_min),
                              static_cast<double>(spec.grid_max));
  return k * spec.step;
}

Tensor quantize(const Tensor& w, const QuantSpec& spec) {
  if (spec.identity()) {
    ensure_finite(w, "quantize");
    return w;
  }
  Tensor out(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = quantize_scalar(w[i], spec);
  return out;
}

RangeEstimate estimate_range_mse(std::span<const double> w, int bits, bool is_signed, int num_candidates) {
  if (w.empty()) throw ShapeError("estimate_range_mse on an empty tensor");
  if (num_candidates < 2) throw ConfigError("estimate_range_mse needs at least 2 candidates");
  RangeEstimate best;
  if (bits == kFullPrecisionBits) {
    best.spec = QuantSpec::full_precision(is_signed);
    return best;
  }
  double top = 0.0;
  for (double v : w) {
    if (!std::isfinite(v)) throw NumericError("estimate_range_mse: non-finite input");
    top = std::max(top, is_signed ? std::abs(v) : v);
  }
  if (top == 0.0) {
    best.spec = make_spec(1.0, bits, is_signed);
    best.all_zero = true;
    for (double v : w) best.sse += v * v;
    return best;
  }
  bool have = false;
  for (int j = 1; j <= num_candidates; ++j) {
    const QuantSpec cand = make_spec(top * j / num_candidates, bits, is_signed);
    double sse = 0.0;
    for (double v : w) {
      const double e = quantize_scalar(v, cand) - v;
      sse += e * e;
    }
    if (!have || sse <= best.sse) {
      best.spec = cand;
      best.sse = sse;
      have = true;
    }
  }
  return best;
}

double rescale_step(double step_b, int b, int a) {
  require_quantizing_bits(b, "rescale_step");
  require_quantizing_bits(a, "rescale_step");
  if (!(step_b > 0.0)) throw ConfigError("rescale_step: step must be positive");
  if (a == b) return step_b;
  return levels(b) / levels(a) * step_b;
}

Tensor uniform_noise(const Tensor::Shape& shape, double step, RngStream& rng) {
  if (!(step >= 0.0)) throw ConfigError("noise step must be non-negative");
  Tensor out(shape);
  for (double& v : out.data()) v = (rng.uniform() - 0.5) * step;
  return out;
}

Tensor pseudo_quantize(const Tensor& w, double step, RngStream& rng) {
  return add(w, uniform_noise(w.shape(), step, rng));
}

Tensor ste_backward(const Tensor& grad_out, const Tensor& w, const QuantSpec& spec) {
  if (!grad_out.same_shape(w)) {
    throw ShapeError("ste_backward " + shape_str(grad_out.shape()) + " vs " + shape_str(w.shape()));
  }
  if (spec.identity()) return grad_out;
  Tensor out(grad_out);
  const double lo = static_cast<double>(spec.grid_min), hi = static_cast<double>(spec.grid_max);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double x = w[i] / spec.step;
    if (x < lo || x > hi) out[i] = 0.0;
  }
  return out;
}

StepTable::StepTable(const QuantSpec& anchor, std::span<const int> bits)
    : anchor_bits_(anchor.bits), is_signed_(anchor.is_signed) {
  require_quantizing_bits(anchor.bits, "StepTable");
  steps_[anchor.bits] = anchor.step;
  for (int b : bits) {
    if (b == kFullPrecisionBits) continue;
    require_quantizing_bits(b, "StepTable");
    steps_[b] = rescale_step(anchor.step, anchor.bits, b);
  }
}

StepTable StepTable::from_steps(std::map<int, double> steps, int anchor_bits, bool is_signed) {
  StepTable t;
  if (!steps.contains(anchor_bits)) throw ConfigError("step table lacks its anchor bit-width");
  for (const auto& [b, s] : steps) {
    require_quantizing_bits(b, "StepTable");
    if (!(s > 0.0)) throw ConfigError("step table entries must be positive");
  }
  t.steps_ = std::move(steps);
  t.anchor_bits_ = anchor_bits;
  t.is_signed_ = is_signed;
  return t;
}

QuantSpec StepTable::spec(int bits) const {
  if (bits == kFullPrecisionBits) return QuantSpec::full_precision(is_signed_);
  if (steps_.empty()) throw UsageError("step table is empty");
  if (auto it = steps_.find(bits); it != steps_.end()) return spec_from_step(it->second, bits, is_signed_);
  return spec_from_step(rescale_step(steps_.at(anchor_bits_), anchor_bits_, bits), bits, is_signed_);
}

bool StepTable::consistent(double rel_tol) const {
  for (const auto& [a, sa] : steps_) {
    for (const auto& [b, sb] : steps_) {
      const double ra = sa * levels(a), rb = sb * levels(b);
      if (std::abs(ra - rb) > rel_tol * std::max(std::abs(ra), std::abs(rb))) return false;
    }
  }
  return true;
}

}  // namespace fedquant
