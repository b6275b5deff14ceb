#include "fedquant/rng.hpp"

#include <cmath>
#include <numbers>

#include "fedquant/error.hpp"

namespace fedquant {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// SplitMix64 finalizer: a bijection on 64-bit words with full avalanche.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t hash_path(std::uint64_t seed, std::span<const std::uint64_t> path) {
  std::uint64_t h = mix64(seed + kGolden);
  h = mix64(h ^ (path.size() * kGolden));
  for (std::uint64_t c : path) h = mix64((h + kGolden) ^ mix64(c + 0x632BE59BD9B4E019ULL));
  return h;
}

}  // namespace

RngStream::RngStream(std::uint64_t root_seed, std::span<const std::uint64_t> path)
    : root_seed_(root_seed), path_(path.begin(), path.end()), key_(hash_path(root_seed, path)) {}

RngStream RngStream::child(std::uint64_t component) const {
  std::vector<std::uint64_t> p = path_;
  p.push_back(component);
  return RngStream(root_seed_, p);
}

std::uint64_t RngStream::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double RngStream::gamma(double shape) { return std::exp(log_gamma_variate(shape)); }

double RngStream::log_gamma_variate(double shape) {
  if (!(shape > 0.0)) throw ConfigError("gamma shape must be positive");
  if (shape < 1.0) {
    // Gamma(a) = Gamma(a + 1) * U^(1/a), taken in log space so that
    // very small shapes do not underflow.
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return log_gamma_variate(shape + 1.0) + std::log(u) / shape;
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = normal();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    double u = uniform();
    if (u <= 0.0) continue;
    if (u < 1.0 - 0.0331 * x * x * x * x) return std::log(d * v);
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return std::log(d * v);
  }
}

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) throw ConfigError("below(0)");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
  for (;;) {
    const std::uint64_t x = next_u64();
    if (x < limit) return x % n;
  }
}

RngStream derive_stream(std::uint64_t root_seed, std::span<const std::uint64_t> path) {
  return RngStream(root_seed, path);
}

RngStream derive_stream(std::uint64_t root_seed, std::initializer_list<std::uint64_t> path) {
  return RngStream(root_seed, path);
}

}  // namespace fedquant
