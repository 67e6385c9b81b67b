#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>

#include <Eigen/Core>

namespace simground {

/// Deterministic random source. Sampling routines are built from raw engine
/// draws only: std::mt19937_64 is fully specified by the standard, the
/// std distributions are not, so using the latter would make seeded runs
/// compiler-dependent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : engine_(mix(seed, stream)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal, Box-Muller with one cached spare.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = kTwoPi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  Eigen::VectorXd normal_vector(int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  /// Integer in [0, n).
  int randint(int n) {
    if (n <= 0) throw std::invalid_argument("randint: n must be positive");
    const int k = static_cast<int>(uniform() * n);
    return k < n ? k : n - 1;
  }

  /// Sample an index from an (approximately normalized) probability vector.
  int categorical(std::span<const double> probs) {
    if (probs.empty()) throw std::invalid_argument("categorical: empty support");
    const double u = uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;  // rounding slack
  }

  /// Geometric(p) over {0, 1, 2, ...}: number of failures before success.
  int geometric(double p) {
    if (p <= 0.0 || p > 1.0) throw std::invalid_argument("geometric: p in (0,1]");
    if (p == 1.0) return 0;
    const double u = 1.0 - uniform();  // (0, 1]
    return static_cast<int>(std::floor(std::log(u) / std::log1p(-p)));
  }

  /// Derive an independent generator. Consumes one draw, so successive forks
  /// are distinct; the result is a pure function of current state and stream.
  Rng fork(std::uint64_t stream = 0) { return Rng(next_u64(), stream); }

 private:
  static constexpr double kTwoPi = 6.283185307179586476925286766559;

  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 of seed advanced by the stream id
    std::uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace simground
