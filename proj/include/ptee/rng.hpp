#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace ptee {

// Deterministic random source. All distribution transforms live here instead
// of <random>'s distribution objects, whose output is implementation-defined;
// with a fixed seed every stream is reproducible bit for bit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(static_cast<std::uint32_t>(mix(seed))) {}

  // Independent stream derived from (seed, stream). Forking never disturbs
  // the parent's state.
  Rng fork(std::uint64_t stream) const { return Rng(mix(seed_ + 0x9e3779b97f4a7c15ULL * (stream + 1))); }

  std::uint32_t next_u32() { return gen_(); }

  // Uniform in [0, 1) with 24 bits of mantissa.
  float uniform() { return static_cast<float>(next_u32() >> 8) * (1.0f / 16777216.0f); }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the spare value is cached.
  float normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = static_cast<double>(next_u32() >> 8) * (1.0 / 16777216.0);
    const double u2 = static_cast<double>(next_u32() >> 8) * (1.0 / 16777216.0);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = static_cast<float>(r * std::sin(a));
    has_spare_ = true;
    return static_cast<float>(r * std::cos(a));
  }

  // Uniform integer in [0, n). Rejection sampling keeps the draw unbiased.
  std::uint32_t below(std::uint32_t n) {
    const std::uint32_t limit = UINT32_MAX - UINT32_MAX % n;
    std::uint32_t v = next_u32();
    while (v >= limit) v = next_u32();
    return v % n;
  }

  // Fisher-Yates shuffle of [0, n).
  template <class Index>
  void shuffle(std::vector<Index>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = below(static_cast<std::uint32_t>(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t mix(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::uint64_t seed_;
  std::mt19937 gen_;
  bool has_spare_ = false;
  float spare_ = 0.0f;
};

}  // namespace ptee
