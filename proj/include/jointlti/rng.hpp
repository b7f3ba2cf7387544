#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace jointlti {

/// Derives a 64-bit seed for an independent sub-stream from a parent seed, an
/// operation tag and a list of indices (system, replicate, ...). Mixing uses
/// SplitMix64 finalizers, so nearby inputs give unrelated seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                          std::initializer_list<std::uint64_t> indices = {});

/// Seedable generator used everywhere randomness is needed.
///
/// Normal variates come from Box-Muller on 53-bit uniforms instead of
/// std::normal_distribution, whose algorithm differs across standard
/// libraries; outputs are therefore identical for a given seed on every
/// conforming platform with an IEEE libm.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Generator for the sub-stream (seed, tag, indices).
  static Rng stream(std::uint64_t seed, std::string_view tag,
                    std::initializer_list<std::uint64_t> indices = {}) {
    return Rng(derive_seed(seed, tag, indices));
  }

  /// Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace jointlti
