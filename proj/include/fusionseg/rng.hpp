#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "fusionseg/common.hpp"

namespace fusionseg {

// All randomness in the project flows from one 64-bit seed through named
// substreams ("data", "init", "shuffle", ...), so each component is
// reproducible on its own. Distributions are hand-rolled on top of
// mt19937_64 raw draws; the std:: distribution objects are not portable
// across standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed), base_(seed) {}

  static Rng stream(uint64_t seed, const std::string& name) {
    uint64_t h = fnv1a64(name.data(), name.size());
    return Rng(splitmix(seed ^ h));
  }

  Rng derive(const std::string& name) const {
    uint64_t h = fnv1a64(name.data(), name.size());
    return Rng(splitmix(base_ ^ h));
  }

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0,1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  uint64_t uniform_int(uint64_t n) {
    if (n == 0) throw ValidationError("uniform_int: n must be positive");
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  int uniform_int(int lo, int hi) {  // inclusive range
    if (hi < lo) throw ValidationError("uniform_int: empty range");
    return lo + static_cast<int>(uniform_int(static_cast<uint64_t>(hi - lo) + 1));
  }

  // Box-Muller; second value cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  // Normal truncated to [-2s, 2s], the usual transformer init.
  double truncated_normal(double std) {
    double x;
    do {
      x = normal();
    } while (x < -2.0 || x > 2.0);
    return x * std;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(static_cast<uint64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static uint64_t splitmix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::mt19937_64 engine_;
  uint64_t base_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fusionseg
