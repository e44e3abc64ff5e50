#pragma once

#include <cstdint>
#include <cmath>
#include <cstddef>
#include <random>

namespace bevkit {

// Seeded generator with a portable double mapping, so identical seeds give
// identical streams across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * n); }
  double normal(double sigma = 1.0);

 private:
  std::mt19937_64 engine_;
};

inline double Rng::normal(double sigma) {
  // Box-Muller on the portable uniform stream.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace bevkit
