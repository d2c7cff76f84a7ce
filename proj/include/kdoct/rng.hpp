#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace kdoct {

// splitmix64; used both as a seed scrambler and to derive independent
// per-sample / per-step streams from (seed, tag, epoch, index) tuples.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

template <typename... Rest>
uint64_t hash_combine(uint64_t a, uint64_t b, Rest... rest) {
  return hash_combine(hash_combine(a, b), static_cast<uint64_t>(rest)...);
}

// Deterministic random stream. std::mt19937_64 output is fully specified by
// the standard; the value mappings below are implemented by hand so results
// do not depend on the standard library's distribution internals.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : engine_(splitmix64(seed)) {}

  uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t uniform_int(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; one fresh pair per call, second value discarded for
  // sequence independence from call sites.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace kdoct
