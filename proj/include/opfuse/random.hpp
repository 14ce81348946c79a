#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "opfuse/tensor.hpp"

namespace opfuse {

// Seeded generator whose output is fixed across standard libraries:
// mt19937_64 is fully specified, and the real mapping is done here rather
// than through std::uniform_real_distribution.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1) with 53 random bits.
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  // Uniform integer in [lo, hi].
  std::uint64_t integer(std::uint64_t lo, std::uint64_t hi) {
    return lo + engine_() % (hi - lo + 1);
  }

  std::uint64_t next() { return engine_(); }

  RowVector row(std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (auto& x : v) x = uniform(lo, hi);
    return RowVector(std::move(v));
  }

  Matrix matrix(std::size_t rows, std::size_t cols, double lo, double hi) {
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = uniform(lo, hi);
    return Matrix(rows, cols, std::move(v));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace opfuse
