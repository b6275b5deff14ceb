#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedquant/model.hpp"
#include "fedquant/rng.hpp"
#include "fedquant/tensor.hpp"

namespace fedquant {

struct Dataset {
  Tensor inputs;            // [n x d]
  std::vector<int> labels;  // n entries in [0, num_classes)
  int num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const { return inputs.cols(); }
  // Throws ConfigError unless labels are in range and shapes agree.
  void validate() const;
  std::vector<std::size_t> class_counts() const;
};

struct SyntheticParams {
  int num_classes = 10;
  int dim = 32;
  int samples_per_class = 100;
  double class_separation = 10.0;
};

struct SplitDataset {
  Dataset train;
  Dataset validation;
};

// Gaussian clusters (unit variance) around mutually orthogonal means of norm
// class_separation. Samples are generated class-interleaved and every fifth
// sample of each class goes to validation.
SplitDataset gen_synthetic(const SyntheticParams& p, RngStream rng);

// Header-less `label,f1,...,fd` rows. Ragged rows are rejected.
Dataset load_csv(const std::filesystem::path& path);

// Label-skewed split: every client draws class proportions from
// Dir(alpha * 1_C) and receives an equal share of the pool, filled class by
// class in proportion to its draw. Lists are sorted and disjoint.
std::vector<std::vector<std::size_t>> dirichlet_partition(std::span<const int> labels, int num_classes,
                                                          int num_clients, double alpha, RngStream rng);

struct FederatedDataset {
  Dataset train;
  Dataset validation;
  std::vector<std::vector<std::size_t>> assignment;  // client -> train indices
  double alpha = 1.0;

  std::size_t num_clients() const noexcept { return assignment.size(); }
};

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices);
Batch full_batch(const Dataset& data);

// Shannon entropy (nats) of a label histogram.
double label_entropy(std::span<const std::size_t> counts);

struct PartitionStats {
  std::vector<std::size_t> client_sizes;
  std::vector<double> client_entropy;
  double mean_entropy = 0.0;
  double global_entropy = 0.0;
  std::size_t total = 0;
};

PartitionStats partition_stats(const Dataset& train, const std::vector<std::vector<std::size_t>>& assignment);

}  // namespace fedquant
