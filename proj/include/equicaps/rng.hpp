#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "equicaps/group.hpp"

namespace equicaps {

// Seeded generator whose derived streams depend only on the mt19937_64 bit
// sequence, which the standard fixes. The standard distributions are avoided
// because their output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }
  // [0, 1)
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // [0, n)
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }
  int integer(int lo, int hi) { return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1))); }
  double normal() {
    // Box-Muller; discards the second variate to keep the stream simple.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  Rot2 rotation() { return Rot2::from_angle(uniform(-std::numbers::pi, std::numbers::pi)); }

  // Independent child seed.
  std::uint64_t fork() { return engine_() ^ 0x9E3779B97F4A7C15ULL; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace equicaps
