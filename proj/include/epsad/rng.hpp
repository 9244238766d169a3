#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace epsad {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Seeded generator used everywhere randomness is consumed.
//
// Engine: std::mt19937_64 seeded with a single 64-bit value.
// Normals: std::normal_distribution<double> (libstdc++ implements the
// Marsaglia polar method and caches the second variate of each pair).
// Uniforms: std::uniform_real_distribution<double> on [0, 1).
// Reproducibility is guaranteed per seed within one build/toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  Vec normal_vector(Eigen::Index d) {
    Vec z(d);
    for (Eigen::Index i = 0; i < d; ++i) z[i] = normal();
    return z;
  }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Split rule for per-worker / per-sample generators:
//   seed(root, stream, index) = mix64(mix64(mix64(root) ^ stream) ^ index)
// Streams tag the role of a generator (reference EPS, test EPS, data, ...)
// so that changing one set size never shifts another set's noise.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream,
                                    std::uint64_t index = 0) noexcept {
  return mix64(mix64(mix64(root) ^ stream) ^ index);
}

}  // namespace epsad
