#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace xmodal {

// Deterministic RNG with explicit distributions (the std:: distribution
// objects are implementation-defined, so we roll our own on top of
// mt19937_64 to keep generated data stable).
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  int64_t uniform_int(int64_t n);

  // Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates shuffle of indices [0, n).
  std::vector<int64_t> permutation(int64_t n);
  // k distinct indices from [0, n), uniform without replacement.
  std::vector<int64_t> sample_without_replacement(int64_t n, int64_t k);

  // Derives an independent stream for a named sub-purpose.
  static uint64_t derive_seed(uint64_t seed, const std::string& tag);

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

} // namespace xmodal
