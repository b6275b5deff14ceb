#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "fedquant/data.hpp"
#include "fedquant/error.hpp"
#include "fedquant/evaluation.hpp"
#include "support.hpp"

using namespace fedquant;

namespace {

SplitDataset synth(int C, int d, int n, double s, std::uint64_t seed = 1) {
  return gen_synthetic({C, d, n, s}, RngStream(seed, {tag(Purpose::kData)}));
}

std::vector<std::vector<std::size_t>> partition(const Dataset& train, int clients, double alpha, std::uint64_t seed) {
  return dirichlet_partition(train.labels, train.num_classes, clients, alpha, RngStream(seed, {tag(Purpose::kPartition)}));
}

double mean_entropy(const Dataset& train, const std::vector<std::vector<std::size_t>>& a) {
  return partition_stats(train, a).mean_entropy;
}

// Full-batch gradient descent on a linear softmax model, trained centrally.
double centralized_accuracy(const SplitDataset& data, int steps, double lr) {
  RngStream rng(5, {1});
  const std::vector<std::size_t> widths{data.train.dim(), static_cast<std::size_t>(data.train.num_classes)};
  ParamSet p = init_params(widths, rng);
  const Batch all = full_batch(data.train);
  for (int i = 0; i < steps; ++i) {
    RngStream r(0, {});
    p = axpy(p, -lr, backward(forward(p, all, QuantPlan::none(), r).cache));
  }
  return evaluate(p, {}, data.validation).accuracy;
}

}  // namespace

TEST(Synthetic, ShapesAndStrideSplit) {
  const SplitDataset d = synth(10, 32, 100, 10.0);
  EXPECT_EQ(d.train.size(), 800u);
  EXPECT_EQ(d.validation.size(), 200u);
  EXPECT_EQ(d.train.dim(), 32u);
  for (std::size_t c : d.train.class_counts()) EXPECT_EQ(c, 80u);
  for (std::size_t c : d.validation.class_counts()) EXPECT_EQ(c, 20u);
  EXPECT_NO_THROW(d.train.validate());
}

TEST(Synthetic, Deterministic) {
  const SplitDataset a = synth(5, 8, 30, 3.0, 42), b = synth(5, 8, 30, 3.0, 42), c = synth(5, 8, 30, 3.0, 43);
  EXPECT_EQ(a.train.inputs, b.train.inputs);
  EXPECT_EQ(a.validation.labels, b.validation.labels);
  EXPECT_NE(a.train.inputs, c.train.inputs);
}

TEST(Synthetic, TooManyClassesForDimension) {
  EXPECT_THROW(synth(10, 5, 10, 1.0), Error);
}

TEST(Synthetic, WellSeparatedIsLearnableCentrally) {
  EXPECT_GE(centralized_accuracy(synth(10, 32, 100, 10.0), 200, 0.5), 0.99);
}

TEST(Synthetic, ZeroSeparationIsChance) {
  const double acc = centralized_accuracy(synth(10, 32, 200, 0.0), 100, 0.5);
  EXPECT_NEAR(acc, 0.1, 0.05);
}

TEST(Partition, SingleClientHoldsEverything) {
  const SplitDataset d = synth(4, 8, 25, 2.0);
  const auto a = partition(d.train, 1, 1.0, 3);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].size(), d.train.size());
  const PartitionStats st = partition_stats(d.train, a);
  EXPECT_NEAR(st.client_entropy[0], st.global_entropy, 1e-12);
}

TEST(Partition, ExactDisjointCoverNonEmpty) {
  const SplitDataset d = synth(10, 16, 60, 2.0);
  for (double alpha : {0.05, 0.1, 1.0, 1e6}) {
    const auto a = partition(d.train, 37, alpha, 9);
    std::set<std::size_t> seen;
    std::size_t total = 0;
    for (const auto& shard : a) {
      EXPECT_FALSE(shard.empty()) << alpha;
      EXPECT_TRUE(std::is_sorted(shard.begin(), shard.end()));
      total += shard.size();
      seen.insert(shard.begin(), shard.end());
    }
    EXPECT_EQ(total, d.train.size()) << alpha;
    EXPECT_EQ(seen.size(), d.train.size()) << alpha;
  }
}

TEST(Partition, Deterministic) {
  const SplitDataset d = synth(10, 16, 40, 2.0);
  EXPECT_EQ(partition(d.train, 20, 0.5, 1), partition(d.train, 20, 0.5, 1));
  EXPECT_NE(partition(d.train, 20, 0.5, 1), partition(d.train, 20, 0.5, 2));
}

TEST(Partition, LargeAlphaMatchesGlobalHistogram) {
  const SplitDataset d = synth(10, 16, 500, 2.0);
  const auto a = partition(d.train, 10, 1e6, 4);
  const auto global = d.train.class_counts();
  const double n = static_cast<double>(d.train.size());
  for (const auto& shard : a) {
    std::vector<double> h(10, 0.0);
    for (std::size_t i : shard) h[static_cast<std::size_t>(d.train.labels[i])] += 1.0;
    double tv = 0.0;
    for (std::size_t c = 0; c < 10; ++c) tv += std::abs(h[c] / shard.size() - global[c] / n);
    EXPECT_LE(tv / 2.0, 0.05);
  }
}

TEST(Partition, SmallAlphaIsMoreHeterogeneous) {
  const SplitDataset d = synth(10, 16, 200, 2.0);
  EXPECT_LT(mean_entropy(d.train, partition(d.train, 100, 0.1, 5)),
            mean_entropy(d.train, partition(d.train, 100, 1e6, 5)));
}

TEST(Partition, EntropyNonDecreasingInAlphaOverSeeds) {
  const SplitDataset d = synth(10, 16, 100, 2.0);
  const double alphas[] = {0.1, 1.0, 10.0, 1e6};
  std::vector<double> avg(4, 0.0);
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    for (int i = 0; i < 4; ++i) avg[static_cast<std::size_t>(i)] += mean_entropy(d.train, partition(d.train, 20, alphas[i], seed)) / 10.0;
  for (std::size_t i = 1; i < 4; ++i) EXPECT_GE(avg[i], avg[i - 1]) << alphas[i];
}

TEST(Partition, MoreClientsThanSamples) {
  const SplitDataset d = synth(2, 2, 2, 1.0);
  EXPECT_THROW(partition(d.train, 10, 1.0, 1), Error);
  EXPECT_THROW(partition(d.train, 1, 0.0, 1), Error);
}

TEST(LabelEntropy, Values) {
  const std::vector<std::size_t> uniform{5, 5, 5, 5}, single{0, 9, 0};
  EXPECT_NEAR(label_entropy(uniform), std::log(4.0), 1e-15);
  EXPECT_EQ(label_entropy(single), 0.0);
}

TEST(Csv, LoadsAndRejectsRaggedRows) {
  const auto dir = std::filesystem::temp_directory_path() / "fedquant_csv_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "ok.csv") << "0,1.5,2\n1,-1,0.25\n2,3,4\n";
    std::ofstream(dir / "ragged.csv") << "0,1,2\n1,3\n";
  }
  const Dataset d = load_csv(dir / "ok.csv");
  EXPECT_EQ(d.size(), 3u);
  EXPECT_EQ(d.dim(), 2u);
  EXPECT_EQ(d.num_classes, 3);
  EXPECT_EQ(d.inputs.at(1, 1), 0.25);
  EXPECT_THROW(load_csv(dir / "ragged.csv"), Error);
  EXPECT_THROW(load_csv(dir / "missing.csv"), Error);
  std::filesystem::remove_all(dir);
}

TEST(Batch, MakeBatchGathersRows) {
  const SplitDataset d = synth(3, 4, 5, 1.0);
  const std::vector<std::size_t> idx{4, 0};
  const Batch b = make_batch(d.train, idx);
  EXPECT_EQ(b.labels, (std::vector<int>{d.train.labels[4], d.train.labels[0]}));
  EXPECT_EQ(b.inputs.at(0, 2), d.train.inputs.at(4, 2));
}
