#include "fedquant/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "fedquant/error.hpp"

namespace fedquant {

void Dataset::validate() const {
  if (num_classes < 2) throw ConfigError("dataset needs at least two classes");
  if (inputs.rank() != 2 || inputs.rows() != labels.size()) throw ConfigError("dataset inputs and labels disagree");
  for (int y : labels)
    if (y < 0 || y >= num_classes) throw ConfigError("label " + std::to_string(y) + " out of range");
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

SplitDataset gen_synthetic(const SyntheticParams& p, RngStream rng) {
  if (p.num_classes < 2) throw ConfigError("need at least 2 classes");
  if (p.dim < 2) throw ConfigError("need at least 2 input dimensions");
  if (p.samples_per_class < 1) throw ConfigError("need at least one sample per class");
  if (!(p.class_separation >= 0.0)) throw ConfigError("class separation must be non-negative");
  if (p.num_classes > p.dim) {
    throw ConfigError("cannot place " + std::to_string(p.num_classes) + " orthogonal class means in " +
                      std::to_string(p.dim) + " dimensions");
  }
  const auto C = static_cast<std::size_t>(p.num_classes);
  const auto d = static_cast<std::size_t>(p.dim);

  // Random orthonormal directions via Gram-Schmidt.
  std::vector<std::vector<double>> means(C, std::vector<double>(d));
  for (std::size_t c = 0; c < C; ++c) {
    auto& v = means[c];
    for (;;) {
      for (double& x : v) x = rng.normal();
      for (std::size_t q = 0; q < c; ++q) {
        const double proj = std::inner_product(v.begin(), v.end(), means[q].begin(), 0.0);
        for (std::size_t k = 0; k < d; ++k) v[k] -= proj * means[q][k];
      }
      const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
      if (norm > 1e-8) {
        for (double& x : v) x /= norm;
        break;
      }
    }
  }
  for (auto& v : means)
    for (double& x : v) x *= p.class_separation;

  std::vector<double> train_x, val_x;
  std::vector<int> train_y, val_y;
  for (int j = 0; j < p.samples_per_class; ++j) {
    const bool val = j % 5 == 4;  // every fifth sample of each class is held out
    for (std::size_t c = 0; c < C; ++c) {
      auto& xs = val ? val_x : train_x;
      for (std::size_t k = 0; k < d; ++k) xs.push_back(means[c][k] + rng.normal());
      (val ? val_y : train_y).push_back(static_cast<int>(c));
    }
  }
  SplitDataset out;
  out.train = {Tensor({train_y.size(), d}, std::move(train_x)), std::move(train_y), p.num_classes};
  if (!val_y.empty()) {
    out.validation = {Tensor({val_y.size(), d}, std::move(val_x)), std::move(val_y), p.num_classes};
  } else {
    out.validation.num_classes = p.num_classes;
  }
  return out;
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  std::vector<double> xs;
  std::vector<int> ys;
  std::size_t dim = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    int label = -1;
    bool first = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        if (first) {
          label = std::stoi(cell, &used);
        } else {
          row.push_back(std::stod(cell, &used));
        }
        while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": bad value '" + cell + "'");
      }
      first = false;
    }
    if (row.empty()) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": no features");
    if (dim == 0) dim = row.size();
    if (row.size() != dim) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": ragged row");
    if (label < 0) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": negative label");
    xs.insert(xs.end(), row.begin(), row.end());
    ys.push_back(label);
  }
  if (ys.empty()) throw ConfigError(path.string() + ": empty dataset");
  Dataset ds;
  ds.num_classes = *std::max_element(ys.begin(), ys.end()) + 1;
  ds.inputs = Tensor({ys.size(), dim}, std::move(xs));
  ds.labels = std::move(ys);
  ds.validate();
  return ds;
}

namespace {

// Integer allocation of `total` units proportional to `weights` (largest
// remainder, ties toward lower index), never exceeding `cap`.
std::vector<std::size_t> allocate(std::span<const double> weights, std::size_t total,
                                  std::span<const std::size_t> cap) {
  const std::size_t k = weights.size();
  std::vector<std::size_t> out(k, 0);
  double wsum = 0.0;
  for (std::size_t c = 0; c < k; ++c)
    if (cap[c] > 0) wsum += weights[c];
  std::vector<double> w(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    if (cap[c] == 0) continue;
    w[c] = wsum > 0.0 ? weights[c] / wsum : 1.0;
  }
  if (!(wsum > 0.0)) {
    const double open = static_cast<double>(std::count_if(cap.begin(), cap.end(), [](std::size_t v) { return v > 0; }));
    for (double& v : w) v = v > 0.0 ? 1.0 / open : 0.0;
  }
  std::vector<std::pair<double, std::size_t>> frac;
  std::size_t used = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double exact = w[c] * static_cast<double>(total);
    out[c] = std::min(cap[c], static_cast<std::size_t>(std::floor(exact)));
    used += out[c];
    if (out[c] < cap[c]) frac.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (const auto& [f, c] : frac) {
    if (used >= total) break;
    ++out[c];
    ++used;
  }
  return out;
}

}  // namespace

std::vector<std::vector<std::size_t>> dirichlet_partition(std::span<const int> labels, int num_classes,
                                                          int num_clients, double alpha, RngStream rng) {
  if (!(alpha > 0.0)) throw ConfigError("Dirichlet alpha must be positive");
  if (num_clients < 1) throw ConfigError("need at least one client");
  if (num_classes < 1) throw ConfigError("need at least one class");
  const std::size_t n = labels.size();
  const auto clients = static_cast<std::size_t>(num_clients);
  if (clients > n) {
    throw ConfigError("more clients (" + std::to_string(clients) + ") than samples (" + std::to_string(n) + ")");
  }
  const auto C = static_cast<std::size_t>(num_classes);
  std::vector<std::vector<std::size_t>> pools(C);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw ConfigError("label out of range in partition");
    pools[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  RngStream shuffle_rng = rng.child(0);
  for (auto& pool : pools) shuffle_rng.shuffle(pool);

  RngStream prop_rng = rng.child(1);
  std::vector<std::vector<std::size_t>> assignment(clients);
  std::vector<std::size_t> avail(C);
  for (std::size_t c = 0; c < C; ++c) avail[c] = pools[c].size();

  for (std::size_t i = 0; i < clients; ++i) {
    std::vector<double> logs(C);
    for (double& v : logs) v = prop_rng.log_gamma_variate(alpha);
    const double top = *std::max_element(logs.begin(), logs.end());
    std::vector<double> p(C);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += (p[c] = std::exp(logs[c] - top));
    for (double& v : p) v /= s;

    std::size_t remaining = n / clients + (i < n % clients ? 1 : 0);
    while (remaining > 0) {
      const auto take = allocate(p, remaining, avail);
      std::size_t got = 0;
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t t = 0; t < take[c]; ++t) {
          assignment[i].push_back(pools[c].back());
          pools[c].pop_back();
        }
        avail[c] -= take[c];
        got += take[c];
      }
      if (got == 0) break;
      remaining -= got;
    }
  }

  // Repair: an empty client takes one sample from the largest client.
  for (auto& a : assignment) {
    if (!a.empty()) continue;
    auto largest = std::max_element(assignment.begin(), assignment.end(),
                                    [](const auto& x, const auto& y) { return x.size() < y.size(); });
    a.push_back(largest->back());
    largest->pop_back();
  }
  for (auto& a : assignment) std::sort(a.begin(), a.end());
  return assignment;
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeError("empty batch");
  const std::size_t d = data.dim();
  std::vector<double> xs;
  xs.reserve(indices.size() * d);
  std::vector<int> ys;
  ys.reserve(indices.size());
  for (std::size_t idx : indices) {
    if (idx >= data.size()) throw ShapeError("batch index out of range");
    const auto row = data.inputs.data().subspan(idx * d, d);
    xs.insert(xs.end(), row.begin(), row.end());
    ys.push_back(data.labels[idx]);
  }
  return {Tensor({indices.size(), d}, std::move(xs)), std::move(ys)};
}

Batch full_batch(const Dataset& data) { return {data.inputs, data.labels}; }

double label_entropy(std::span<const std::size_t> counts) {
  const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  if (total == 0.0) return 0.0;
  double h = 0.0;
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const double q = static_cast<double>(c) / total;
    h -= q * std::log(q);
  }
  return h;
}

PartitionStats partition_stats(const Dataset& train, const std::vector<std::vector<std::size_t>>& assignment) {
  PartitionStats st;
  const auto C = static_cast<std::size_t>(train.num_classes);
  for (const auto& idx : assignment) {
    std::vector<std::size_t> counts(C, 0);
    for (std::size_t i : idx) ++counts[static_cast<std::size_t>(train.labels.at(i))];
    st.client_sizes.push_back(idx.size());
    st.client_entropy.push_back(label_entropy(counts));
    st.total += idx.size();
  }
  if (!assignment.empty()) {
    st.mean_entropy = std::accumulate(st.client_entropy.begin(), st.client_entropy.end(), 0.0) /
                      static_cast<double>(assignment.size());
  }
  const auto global = train.class_counts();
  st.global_entropy = label_entropy(global);
  return st;
}

}  // namespace fedquant
