#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace fedquant {

// Purpose tags used as the last path component of a stream. The numeric
// values are part of the reproducibility contract; never renumber them.
enum class Purpose : std::uint64_t {
  kInit = 1,
  kData = 2,
  kPartition = 3,
  kClientSample = 4,
  kBatches = 5,
  kNoise = 6,
  kBitSample = 7,
  kFixedBit = 8,
  kCalibration = 9,
  kTheory = 10,
};

inline std::uint64_t tag(Purpose p) { return static_cast<std::uint64_t>(p); }

// Counter-based pseudo-random stream. The key is a hash of (root_seed, path);
// draw i is a bijective mix of key + i. Identical (seed, path) pairs always
// yield identical sequences, independent of thread scheduling.
class RngStream {
 public:
  RngStream(std::uint64_t root_seed, std::span<const std::uint64_t> path);
  RngStream(std::uint64_t root_seed, std::initializer_list<std::uint64_t> path)
      : RngStream(root_seed, std::span<const std::uint64_t>(path.begin(), path.size())) {}

  std::uint64_t root_seed() const noexcept { return root_seed_; }
  const std::vector<std::uint64_t>& path() const noexcept { return path_; }

  // Child stream with `component` appended to the path.
  RngStream child(std::uint64_t component) const;

  std::uint64_t next_u64();
  double uniform();                     // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  double normal();                      // N(0, 1), Box-Muller
  double gamma(double shape);           // Gamma(shape, 1), Marsaglia-Tsang
  double log_gamma_variate(double shape);  // log of a Gamma(shape, 1) draw, safe for tiny shape
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t root_seed_;
  std::vector<std::uint64_t> path_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

RngStream derive_stream(std::uint64_t root_seed, std::span<const std::uint64_t> path);
RngStream derive_stream(std::uint64_t root_seed, std::initializer_list<std::uint64_t> path);

}  // namespace fedquant
