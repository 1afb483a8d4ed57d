// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dct/array2.hpp"

namespace dct {

/// Seeded generator with platform-independent draws. std distributions are
/// implementation-defined, so uniform/normal are derived from raw engine bits.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Uniform integer in [lo, hi].
  int between(int lo, int hi);
  double normal();

  std::string serialize() const;
  static Rng deserialize(const std::string& state);

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Independent seed for a named stream and index under a base seed
/// (splitmix64 finalizer over an FNV-1a mix).
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream, std::uint64_t index = 0);

/// Row-wise softmax of logits / temperature with max subtraction.
/// Throws std::invalid_argument when temperature <= 0.
Array2 softmax_rows(const Array2& logits, double temperature = 1.0);

/// log softmax of a single row.
std::vector<double> log_softmax(std::span<const double> logits);

/// Draws index i with probability probs[i] by inverse-CDF on one uniform.
/// Throws std::invalid_argument when probs does not sum to 1 within 1e-6 or
/// has negative entries.
int sample_categorical(std::span<const double> probs, Rng& rng);

/// Index of the largest entry; ties resolve to the smallest index.
int argmax(std::span<const double> values);

}  // namespace dct
