#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace dbp {

/// splitmix64 finaliser, used to derive independent child seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seeded 64-bit generator. Distributions are computed here from raw engine
/// output rather than through <random> distributions, whose algorithms are
/// implementation-defined, so streams are reproducible across standard
/// libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix_seed(seed)) {}

  /// Independent stream for sub-component `index` (e.g. a layer).
  [[nodiscard]] Rng split(std::uint64_t index) const {
    return Rng(mix_seed(seed_of_engine() ^ mix_seed(index + 1)));
  }

  std::uint64_t next() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return v % n;
  }

 private:
  [[nodiscard]] std::uint64_t seed_of_engine() const {
    std::mt19937_64 copy = engine_;
    return copy();
  }

  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dbp
