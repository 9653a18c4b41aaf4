#pragma once

// Counter-based deterministic random streams.
//
// Every random decision in the lab draws from a stream derived from a small
// integer tuple (seed, a, b, c).  Streams derived from distinct tuples are
// decorrelated, and a stream's output depends only on its tuple — never on
// how many other streams exist or in what order they were created.  That is
// what makes lazily-initialized tables and parallel rollouts reproducible.
//
// The generator is splitmix64; gaussians come from Box-Muller.  Both are
// implemented here rather than taken from <random> because the standard
// engines/distributions do not guarantee bit-identical output across
// platforms or library versions, and this lab's tests pin exact bytes.

#include <cstdint>
#include <cmath>

namespace vopd {

inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class RandomStream {
 public:
  explicit RandomStream(uint64_t state) : state_(state) {}

  // Stream for the tuple (seed, a, b, c).  Chained mixing: collisions between
  // distinct tuples would need mix64 fixed-point structure we don't have.
  static RandomStream derive(uint64_t seed, uint64_t a = 0, uint64_t b = 0,
                             uint64_t c = 0) {
    uint64_t s = mix64(seed);
    s = mix64(s ^ (a + 0x632be59bd9b4e019ull));
    s = mix64(s ^ (b + 0x9e6c63d0876a9a47ull));
    s = mix64(s ^ (c + 0xd1b54a32d192ed03ull));
    return RandomStream(s);
  }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; generates pairs, caches the spare.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0,1] so the log is finite.
    double u1 = 1.0 - next_double();
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, n).  Rejection-free modulo is fine here: n is
  // always tiny (vocab sizes, prompt counts) relative to 2^64, so the bias is
  // below anything observable, and staying branch-free keeps streams aligned.
  int64_t next_below(int64_t n) {
    return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace vopd
