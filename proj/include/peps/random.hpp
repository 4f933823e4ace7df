#pragma once

#include <cstdint>
#include <random>

namespace peps {

/// Seedable noise source. The engine is std::mt19937_64, whose output
/// sequence is fixed by the standard; doubles are built from the top 53 bits
/// so values agree across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace peps
