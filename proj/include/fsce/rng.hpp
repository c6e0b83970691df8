#ifndef FSCE_RNG_HPP
#define FSCE_RNG_HPP

#include <cstdint>
#include <cmath>
#include <vector>

namespace fsce {

// Deterministic PRNG wrapper. All sampling goes through hand-rolled
// transforms (never std::*_distribution, whose output is
// implementation-defined) so that a seed pins the whole trajectory.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(splitmix64(seed ^ 0x9e3779b97f4a7c15ull)) {}

  uint64_t next_u64() {
    // xorshift64* on a splitmix-initialized state
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545f4914f6cdd1dull;
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive range
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
  }

  // Box-Muller, one sample per call (the sine twin is discarded so the
  // consumption pattern stays trivially predictable)
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = next_u64() % i;
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derive an independent stream; used to give each component its own
  // initialization sequence regardless of construction order.
  Rng fork(uint64_t tag) const { return Rng(splitmix64(state_ ^ tag)); }

  static uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

 private:
  uint64_t state_;
};

}  // namespace fsce

#endif  // FSCE_RNG_HPP
