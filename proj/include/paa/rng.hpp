#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace paa {

// Counter-based PRNG. A stream is fully determined by its key; the key is
// derived from the global seed plus any number of context ids (step, batch
// index, patch index, ...), so draws are independent of scheduling order.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t derive_key(std::uint64_t seed,
                                  std::initializer_list<std::uint64_t> ids) {
    std::uint64_t k = mix(seed);
    for (std::uint64_t id : ids) k = mix(k ^ mix(id + 0x632be59bd9b4e019ULL));
    return k;
  }

  std::uint64_t next_u64() { return mix(key_ ^ mix(counter_++)); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  bool bernoulli(double p) { return uniform() < p; }

  // Beta(1,1) is uniform; kept as a named draw because callers mean "lambda".
  double beta11() { return uniform(); }

  double normal() {
    // Box-Muller, no caching so the stream position stays a pure counter.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace paa
