#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace crfp {

// splitmix64; used to derive independent stream seeds (e.g. per-iteration
// sampler seeds) from a base seed without correlated low bits.
inline uint64_t mix_seed(uint64_t seed, uint64_t k) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (k + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Replayable RNG with a pinned recipe:
//   engine   mt19937 seeded with the low 32 bits of splitmix64(seed)
//   uniform  (x + 0.5) / 2^32 over the raw 32-bit draw -> (0, 1)
//   gaussian Marsaglia polar method, second variate discarded
//   ints     floor(uniform * n) — not std::uniform_int_distribution, whose
//            output is implementation-defined across standard libraries
// Every stochastic choice in the project flows through this type so traces,
// parameter inits and samplers replay bit-for-bit.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(static_cast<uint32_t>(mix_seed(seed, 0))) {}

  double uniform() { return (static_cast<double>(eng_()) + 0.5) * (1.0 / 4294967296.0); }

  double gaussian() {
    for (;;) {
      double u = 2.0 * uniform() - 1.0;
      double v = 2.0 * uniform() - 1.0;
      double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }

  // Inclusive range.
  int uniform_int(int lo, int hi) {
    int n = hi - lo + 1;
    int k = static_cast<int>(std::floor(uniform() * n));
    if (k >= n) k = n - 1;
    return lo + k;
  }

  float uniform_range(float a, float b) { return a + static_cast<float>(uniform()) * (b - a); }

 private:
  std::mt19937 eng_;
};

}  // namespace crfp
