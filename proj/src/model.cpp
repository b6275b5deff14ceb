#include "fedquant/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedquant/error.hpp"

namespace fedquant {

// ---------------------------------------------------------------------------
// ParamSet

ParamSet::ParamSet(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw ShapeError("ParamSet needs at least one layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    if (l.weight.rank() != 2 || l.bias.rank() != 1 || l.bias.size() != l.weight.cols()) {
      throw ShapeError("layer " + std::to_string(i) + " weight " + shape_str(l.weight.shape()) + " bias " +
                       shape_str(l.bias.shape()));
    }
    if (i > 0 && layers_[i - 1].weight.cols() != l.weight.rows()) {
      throw ShapeError("layer " + std::to_string(i) + " does not chain with its predecessor");
    }
    total_dim_ += l.weight.size() + l.bias.size();
  }
}

ParamSet ParamSet::zeros(std::span<const std::size_t> widths) {
  if (widths.size() < 2) throw ShapeError("need at least input and output widths");
  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    layers.push_back({Tensor({widths[i], widths[i + 1]}), Tensor({widths[i + 1]})});
  }
  return ParamSet(std::move(layers));
}

ParamSet ParamSet::zeros_like(const ParamSet& other) {
  const auto w = other.widths();
  return zeros(w);
}

std::vector<std::size_t> ParamSet::widths() const {
  std::vector<std::size_t> w;
  if (layers_.empty()) return w;
  w.push_back(layers_.front().weight.rows());
  for (const Layer& l : layers_) w.push_back(l.weight.cols());
  return w;
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(total_dim_);
  for (const Layer& l : layers_) {
    flat.insert(flat.end(), l.weight.data().begin(), l.weight.data().end());
    flat.insert(flat.end(), l.bias.data().begin(), l.bias.data().end());
  }
  return flat;
}

ParamSet ParamSet::unflatten(std::span<const double> flat) const {
  if (flat.size() != total_dim_) {
    throw ShapeError("unflatten: expected " + std::to_string(total_dim_) + " values, got " +
                     std::to_string(flat.size()));
  }
  std::vector<Layer> out;
  std::size_t off = 0;
  auto take = [&](const Tensor& like) {
    std::vector<double> v(flat.begin() + off, flat.begin() + off + like.size());
    off += like.size();
    return Tensor(like.shape(), std::move(v));
  };
  for (const Layer& l : layers_) {
    Tensor w = take(l.weight);
    Tensor b = take(l.bias);
    out.push_back({std::move(w), std::move(b)});
  }
  return ParamSet(std::move(out));
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layers_[i].weight.same_shape(other.layers_[i].weight) || !layers_[i].bias.same_shape(other.layers_[i].bias))
      return false;
  }
  return true;
}

bool ParamSet::all_finite() const {
  return std::all_of(layers_.begin(), layers_.end(),
                     [](const Layer& l) { return l.weight.all_finite() && l.bias.all_finite(); });
}

namespace {

template <typename F>
ParamSet zip_params(const ParamSet& a, const ParamSet& b, F f) {
  if (!a.same_layout(b)) throw ShapeError("parameter sets have different layouts");
  std::vector<Layer> out;
  out.reserve(a.num_layers());
  for (std::size_t i = 0; i < a.num_layers(); ++i) {
    out.push_back({f(a.layer(i).weight, b.layer(i).weight), f(a.layer(i).bias, b.layer(i).bias)});
  }
  return ParamSet(std::move(out));
}

}  // namespace

ParamSet add(const ParamSet& a, const ParamSet& b) {
  return zip_params(a, b, [](const Tensor& x, const Tensor& y) { return add(x, y); });
}

ParamSet sub(const ParamSet& a, const ParamSet& b) {
  return zip_params(a, b, [](const Tensor& x, const Tensor& y) { return sub(x, y); });
}

ParamSet scale(const ParamSet& a, double s) {
  std::vector<Layer> out;
  for (const Layer& l : a.layers()) out.push_back({scale(l.weight, s), scale(l.bias, s)});
  return ParamSet(std::move(out));
}

ParamSet axpy(const ParamSet& a, double s, const ParamSet& b) {
  return zip_params(a, b, [s](const Tensor& x, const Tensor& y) {
    Tensor out(x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += s * y[i];
    ensure_finite(out, "axpy");
    return out;
  });
}

double squared_norm(const ParamSet& a) {
  double acc = 0.0;
  for (const Layer& l : a.layers()) acc += squared_norm(l.weight) + squared_norm(l.bias);
  return acc;
}

ParamSet init_params(std::span<const std::size_t> widths, RngStream& rng) {
  ParamSet p = ParamSet::zeros(widths);
  for (std::size_t i = 0; i < p.num_layers(); ++i) {
    Tensor& w = p.layer(i).weight;
    const double sd = std::sqrt(2.0 / static_cast<double>(w.rows()));
    for (double& v : w.data()) v = sd * rng.normal();
  }
  return p;
}

// ---------------------------------------------------------------------------
// QuantPlan

QuantPlan QuantPlan::qat(std::vector<QuantSpec> weight_specs) {
  QuantPlan p;
  p.weight_mode = WeightQuant::kQat;
  p.weight_specs = std::move(weight_specs);
  return p;
}

QuantPlan QuantPlan::apqn(std::vector<double> noise_steps) {
  QuantPlan p;
  p.weight_mode = WeightQuant::kApqn;
  p.weight_noise = std::move(noise_steps);
  return p;
}

void QuantPlan::validate(const ParamSet& params) const {
  const std::size_t n = params.num_layers();
  switch (weight_mode) {
    case WeightQuant::kNone:
      if (!weight_specs.empty() || !weight_noise.empty()) throw ConfigError("plan without weight quantization has specs");
      break;
    case WeightQuant::kQat:
      if (weight_specs.size() != n) throw ConfigError("QAT plan needs one weight spec per layer");
      break;
    case WeightQuant::kApqn:
      if (weight_noise.size() != n) throw ConfigError("APQN plan needs one noise step per layer");
      for (double s : weight_noise)
        if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("APQN noise steps must be finite and non-negative");
      if (frozen_weight_noise) {
        if (frozen_weight_noise->size() != n) throw ConfigError("frozen noise needs one tensor per layer");
        for (std::size_t i = 0; i < n; ++i)
          if (!(*frozen_weight_noise)[i].same_shape(params.layer(i).weight))
            throw ShapeError("frozen noise shape mismatch at layer " + std::to_string(i));
      }
      break;
  }
  switch (act_mode) {
    case ActQuant::kNone:
      if (!act_specs.empty() || !act_noise.empty()) throw ConfigError("plan without activation quantization has specs");
      break;
    case ActQuant::kQat:
      if (act_specs.size() != n) throw ConfigError("activation QAT plan needs one spec per layer");
      for (std::size_t i = 1; i < n; ++i)
        if (act_specs[i].is_signed && !act_specs[i].identity()) throw ConfigError("activation specs must be unsigned");
      break;
    case ActQuant::kApqn:
      if (act_noise.size() != n) throw ConfigError("activation APQN plan needs one noise step per layer");
      for (double s : act_noise)
        if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("APQN noise steps must be finite and non-negative");
      break;
  }
  if (act_kure_lambda < 0.0) throw ConfigError("activation KURE weight must be non-negative");
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

void relu_inplace(Tensor& t) {
  for (double& v : t.data()) v = v > 0.0 ? v : 0.0;
}

Tensor softmax_rows(const Tensor& logits) {
  const std::size_t n = logits.rows(), c = logits.cols();
  Tensor p(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double m = logits.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, logits.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (p.at(i, j) = std::exp(logits.at(i, j) - m));
    for (std::size_t j = 0; j < c; ++j) p.at(i, j) /= s;
  }
  return p;
}

void check_batch(const ParamSet& params, const Tensor& inputs, std::span<const int> labels) {
  if (inputs.rank() != 2 || inputs.cols() != params.input_dim()) {
    throw ShapeError("batch inputs " + shape_str(inputs.shape()) + " do not match input width " +
                     std::to_string(params.input_dim()));
  }
  if (labels.size() != inputs.rows()) throw ShapeError("label count does not match batch rows");
  const int classes = static_cast<int>(params.output_dim());
  for (int y : labels)
    if (y < 0 || y >= classes) throw ShapeError("label " + std::to_string(y) + " out of range");
}

double kure_term(double k, double k_tau) { return (k - k_tau) * (k - k_tau); }

Tensor weight_for_forward(const ParamSet& params, std::size_t l, const QuantPlan& plan, RngStream& rng,
                          Tensor* noise_out) {
  const Tensor& w = params.layer(l).weight;
  switch (plan.weight_mode) {
    case WeightQuant::kQat:
      return quantize(w, plan.weight_specs[l]);
    case WeightQuant::kApqn: {
      Tensor noise = plan.frozen_weight_noise ? (*plan.frozen_weight_noise)[l]
                                              : uniform_noise(w.shape(), plan.weight_noise[l], rng);
      Tensor out = add(w, noise);
      if (noise_out) *noise_out = std::move(noise);
      return out;
    }
    case WeightQuant::kNone:
      break;
  }
  return w;
}

Tensor input_for_layer(const Tensor& h, std::size_t l, const QuantPlan& plan, RngStream* rng) {
  if (l == 0) return h;
  switch (plan.act_mode) {
    case ActQuant::kQat:
      return quantize(h, plan.act_specs[l]);
    case ActQuant::kApqn:
      if (rng) return add(h, uniform_noise(h.shape(), plan.act_noise[l], *rng));
      break;
    case ActQuant::kNone:
      break;
  }
  return h;
}

}  // namespace

double cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t n = logits.rows(), c = logits.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double m = logits.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, logits.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(logits.at(i, j) - m);
    total += m + std::log(s) - logits.at(i, static_cast<std::size_t>(labels[i]));
  }
  return total / static_cast<double>(n);
}

ForwardResult forward(const ParamSet& params, const Batch& batch, const QuantPlan& plan, RngStream& rng) {
  plan.validate(params);
  check_batch(params, batch.inputs, batch.labels);
  if (batch.size() == 0) throw ShapeError("empty batch");

  ForwardResult res;
  ForwardCache& c = res.cache;
  const std::size_t layers = params.num_layers();
  RngStream weight_rng = rng.child(0);
  RngStream act_rng = rng.child(1);

  double act_kure = 0.0;
  std::size_t act_tensors = 0;
  Tensor h = batch.inputs;
  for (std::size_t l = 0; l < layers; ++l) {
    Tensor noise;
    c.shadow_weights.push_back(params.layer(l).weight);
    c.effective_weights.push_back(weight_for_forward(params, l, plan, weight_rng, &noise));
    c.weight_noise.push_back(std::move(noise));
    if (l > 0 && plan.act_kure_lambda > 0.0) {
      act_kure += kure_term(kurtosis(h), plan.k_tau);
      ++act_tensors;
    }
    Tensor a = input_for_layer(h, l, plan, &act_rng);
    Tensor z = add_row(matmul(a, c.effective_weights.back()), params.layer(l).bias);
    c.pre_quant_inputs.push_back(std::move(h));
    c.layer_inputs.push_back(std::move(a));
    h = z;
    if (l + 1 < layers) relu_inplace(h);
    c.pre_activations.push_back(std::move(z));
  }
  const Tensor& logits = c.pre_activations.back();
  res.loss = cross_entropy(logits, batch.labels);
  if (act_tensors > 0) res.loss += plan.act_kure_lambda * act_kure / static_cast<double>(act_tensors);
  if (!std::isfinite(res.loss)) throw NumericError("non-finite loss");
  c.probs = softmax_rows(logits);
  c.labels = batch.labels;
  c.plan = plan;
  c.valid = true;
  return res;
}

ParamSet backward(const ForwardCache& c) {
  if (!c.valid) throw UsageError("backward called without a matching forward cache");
  const std::size_t layers = c.shadow_weights.size();
  const std::size_t n = c.labels.size();
  const QuantPlan& plan = c.plan;

  std::size_t act_tensors = 0;
  if (plan.act_kure_lambda > 0.0) act_tensors = layers - 1;

  Tensor dz = c.probs;
  for (std::size_t i = 0; i < n; ++i) dz.at(i, static_cast<std::size_t>(c.labels[i])) -= 1.0;
  dz = scale(dz, 1.0 / static_cast<double>(n));

  std::vector<Layer> grads(layers);
  for (std::size_t l = layers; l-- > 0;) {
    Tensor dw = matmul_tn(c.layer_inputs[l], dz);
    grads[l].bias = sum_rows(dz);
    if (plan.weight_mode == WeightQuant::kQat) dw = ste_backward(dw, c.shadow_weights[l], plan.weight_specs[l]);
    grads[l].weight = std::move(dw);
    if (l == 0) break;

    Tensor da = matmul_nt(dz, c.effective_weights[l]);
    const Tensor& h = c.pre_quant_inputs[l];
    if (plan.act_mode == ActQuant::kQat) da = ste_backward(da, h, plan.act_specs[l]);
    if (act_tensors > 0) {
      const double k = kurtosis(h);
      const double coeff = plan.act_kure_lambda * 2.0 * (k - plan.k_tau) / static_cast<double>(act_tensors);
      const Tensor gk = kurtosis_gradient(h);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += coeff * gk[i];
    }
    // ReLU derivative; zero at exactly 0.
    const Tensor& z = c.pre_activations[l - 1];
    for (std::size_t i = 0; i < da.size(); ++i)
      if (!(z[i] > 0.0)) da[i] = 0.0;
    dz = std::move(da);
  }
  return ParamSet(std::move(grads));
}

Tensor predict_logits(const ParamSet& params, const Tensor& inputs, const QuantPlan& plan) {
  plan.validate(params);
  if (inputs.rank() != 2 || inputs.cols() != params.input_dim()) throw ShapeError("inputs do not match network");
  Tensor h = inputs;
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    Tensor w = plan.weight_mode == WeightQuant::kQat ? quantize(params.layer(l).weight, plan.weight_specs[l])
                                                     : params.layer(l).weight;
    Tensor a = input_for_layer(h, l, plan, nullptr);
    h = add_row(matmul(a, w), params.layer(l).bias);
    if (l + 1 < params.num_layers()) relu_inplace(h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Kurtosis

namespace {

struct Moments {
  double mean = 0.0, m2 = 0.0, m3 = 0.0, m4 = 0.0;
};

Moments central_moments(std::span<const double> w) {
  if (w.size() < 2) throw DegenerateError("kurtosis needs at least two elements");
  Moments m;
  const double n = static_cast<double>(w.size());
  for (double v : w) m.mean += v;
  m.mean /= n;
  for (double v : w) {
    const double d = v - m.mean, d2 = d * d;
    m.m2 += d2;
    m.m3 += d2 * d;
    m.m4 += d2 * d2;
  }
  m.m2 /= n;
  m.m3 /= n;
  m.m4 /= n;
  if (!(m.m2 > 0.0)) throw DegenerateError("constant tensor has zero standard deviation");
  return m;
}

}  // namespace

double kurtosis(std::span<const double> w) {
  const Moments m = central_moments(w);
  return m.m4 / (m.m2 * m.m2);
}

Tensor kurtosis_gradient(const Tensor& w) {
  const Moments m = central_moments(w.data());
  const double n = static_cast<double>(w.size());
  const double a = 4.0 / (n * m.m2 * m.m2);
  const double b = 4.0 * m.m4 / (n * m.m2 * m.m2 * m.m2);
  Tensor g(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = w[i] - m.mean;
    g[i] = a * (d * d * d - m.m3) - b * d;
  }
  return g;
}

double kure_loss(const ParamSet& params, double k_tau) {
  double acc = 0.0;
  for (const Layer& l : params.layers()) acc += kure_term(kurtosis(l.weight), k_tau);
  return acc / static_cast<double>(params.num_layers());
}

ParamSet kure_gradient(const ParamSet& params, double k_tau) {
  ParamSet g = ParamSet::zeros_like(params);
  const double m = static_cast<double>(params.num_layers());
  for (std::size_t i = 0; i < params.num_layers(); ++i) {
    const Tensor& w = params.layer(i).weight;
    const double coeff = 2.0 * (kurtosis(w) - k_tau) / m;
    g.layer(i).weight = scale(kurtosis_gradient(w), coeff);
  }
  return g;
}

}  // namespace fedquant
