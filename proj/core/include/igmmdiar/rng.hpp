#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace igmmdiar {

// Repository-wide pseudo-random source: std::mt19937_64 (its output sequence
// is fixed by the standard) with distributions implemented here rather than
// taken from <random>, whose distribution algorithms vary between standard
// libraries. Sampled fixtures are therefore reproducible across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform on (0, 1).
  double uniform_open();
  // Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi);

  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Gamma(shape, scale = 1), Marsaglia-Tsang.
  double gamma(double shape);
  // Beta(1, b) by inversion: 1 - U^(1/b).
  double beta_one(double b);

  // Index drawn proportionally to non-negative weights.
  int categorical(std::span<const double> weights);

 private:
  std::mt19937_64 engine_;
};

}  // namespace igmmdiar
