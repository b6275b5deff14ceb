#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "fedquant/data.hpp"
#include "fedquant/error.hpp"
#include "fedquant/model.hpp"
#include "fedquant/rng.hpp"
#include "fedquant/tensor.hpp"

namespace fqtest {

using namespace fedquant;

inline Tensor random_tensor(Tensor::Shape shape, RngStream& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = scale * rng.normal();
  return t;
}

inline Batch random_batch(std::size_t n, std::size_t d, int classes, RngStream& rng) {
  Batch b{random_tensor({n, d}, rng), {}};
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))));
  return b;
}

inline ParamSet random_params(std::vector<std::size_t> widths, RngStream& rng, double bias_scale = 0.1) {
  ParamSet p = init_params(widths, rng);
  for (std::size_t l = 0; l < p.num_layers(); ++l)
    for (double& x : p.layer(l).bias.data()) x = bias_scale * rng.normal();
  return p;
}

// Central differences of `f` over every flattened coordinate of `p`.
inline std::vector<double> numeric_gradient(const ParamSet& p, const std::function<double(const ParamSet&)>& f,
                                            double h = 1e-5) {
  std::vector<double> flat = p.flatten();
  std::vector<double> g(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double orig = flat[i];
    flat[i] = orig + h;
    const double up = f(p.unflatten(flat));
    flat[i] = orig - h;
    const double down = f(p.unflatten(flat));
    flat[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-4) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

// Kind of the fedquant::Error thrown by `f`; std::nullopt if nothing is thrown.
inline std::optional<ErrorKind> error_kind(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

// Small separable federated problem used across module tests.
inline FederatedDataset tiny_federation(int clients, std::uint64_t seed = 3, double alpha = 1.0, int per_class = 20,
                                        double sep = 6.0, int classes = 3, int dim = 4) {
  SyntheticParams sp{classes, dim, per_class, sep};
  SplitDataset split = gen_synthetic(sp, RngStream(seed, {tag(Purpose::kData)}));
  FederatedDataset fd;
  fd.assignment = dirichlet_partition(split.train.labels, classes, clients, alpha, RngStream(seed, {tag(Purpose::kPartition)}));
  fd.train = std::move(split.train);
  fd.validation = std::move(split.validation);
  fd.alpha = alpha;
  return fd;
}

}  // namespace fqtest
