#pragma once

// Seeded sampling helpers. std::mt19937_64 is bit-exact across platforms but
// the standard distributions are not, so uniforms are derived by hand: this
// keeps CSV outputs byte-identical for a fixed seed everywhere.

#include <cstdint>
#include <random>

namespace beamwf::detail {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t raw() { return eng_(); }

 private:
  std::mt19937_64 eng_;
};

}  // namespace beamwf::detail
