#pragma once

#include <cstdint>
#include <random>

namespace selfonn {

/// Seeded generator with a fixed, build-independent output stream.
///
/// Bits come from std::mt19937_64, whose sequence the standard pins exactly.
/// Uniform doubles take the top 53 bits; normals use the Box-Muller transform
/// on two such uniforms. The distribution classes in <random> are avoided
/// because their algorithms are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal variate.
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Derives an independent child seed (splitmix64 finaliser).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace selfonn
