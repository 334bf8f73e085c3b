#include "capgen/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace capgen {

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
  // Rejection sampling keeps the draw exactly uniform.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

std::uint64_t Rng::geometric(double p, std::uint64_t cap) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("Rng::geometric: p outside [0,1]");
  if (p == 1.0) return 0;
  if (p == 0.0) return cap;
  const double u = 1.0 - uniform();  // (0, 1]
  const double k = std::floor(std::log(u) / std::log1p(-p));
  if (!(k < static_cast<double>(cap))) return cap;
  return static_cast<std::uint64_t>(k);
}

int Rng::categorical(std::span<const double> probs) {
  if (probs.empty()) throw std::invalid_argument("Rng::categorical: empty distribution");
  double total = 0.0;
  for (double p : probs) total += p;
  const double u = uniform() * total;
  double acc = 0.0;
  int last_positive = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last_positive = static_cast<int>(i);
    if (u < acc) return last_positive;
  }
  if (last_positive < 0) throw std::invalid_argument("Rng::categorical: no positive mass");
  return last_positive;
}

}  // namespace capgen
