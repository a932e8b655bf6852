#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace motun {

/// Derives a child seed from a parent seed and a component label, so every
/// consumer of randomness in the pipeline owns an independent, reproducible
/// stream keyed by name (and optionally an index).
uint64_t derive_seed(uint64_t parent, std::string_view label);
uint64_t derive_seed(uint64_t parent, std::string_view label, uint64_t index);

/// Deterministic generator. Normal deviates use Box-Muller on top of the
/// engine's raw bits so sequences do not depend on the standard library's
/// distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n).
  uint64_t uniform_index(uint64_t n);
  /// Standard normal deviate.
  double normal();
  /// true with probability p.
  bool bernoulli(double p) { return uniform() < p; }

  std::vector<double> normal_vec(size_t n);

  /// Fisher-Yates shuffle of [0, n) indices.
  std::vector<size_t> permutation(size_t n);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace motun
