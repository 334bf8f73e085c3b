#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace capgen {

// Seeded std::mt19937_64 with portable derived draws. The standard
// distributions are implementation-defined, so every draw used by the
// library is computed here from raw 64-bit outputs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  // Number of failures before the first success: P(k) = (1-p)^k p.
  // p == 0 returns `cap`; results are clamped to `cap`.
  std::uint64_t geometric(double p, std::uint64_t cap);

  // Inverse-CDF draw over indices in ascending order.
  // Zero-mass entries are never selected.
  int categorical(std::span<const double> probs);

  // Independent child stream; advances this generator.
  Rng split() { return Rng(next() ^ 0x9e3779b97f4a7c15ULL); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace capgen
