#include "xmodal/rng.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace xmodal {

int64_t Rng::uniform_int(int64_t n) {
  if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
  // Rejection sampling to avoid modulo bias.
  uint64_t un = static_cast<uint64_t>(n);
  uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t x;
  do {
    x = eng_();
  } while (x >= limit);
  return static_cast<int64_t>(x % un);
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1, u2;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

std::vector<int64_t> Rng::permutation(int64_t n) {
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int64_t i = n - 1; i > 0; --i) {
    int64_t j = uniform_int(i + 1);
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

std::vector<int64_t> Rng::sample_without_replacement(int64_t n, int64_t k) {
  if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
  auto perm = permutation(n);
  perm.resize(static_cast<size_t>(k));
  return perm;
}

uint64_t Rng::derive_seed(uint64_t seed, const std::string& tag) {
  // FNV-1a over the tag, mixed with the base seed.
  uint64_t h = 1469598103934665603ull ^ seed;
  for (char c : tag) {
    h ^= static_cast<uint8_t>(c);
    h *= 1099511628211ull;
  }
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdull;
  h ^= h >> 33;
  return h;
}

} // namespace xmodal
