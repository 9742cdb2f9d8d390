#pragma once

#include <cstdint>
#include <random>

#include "hrformer/tensor.hpp"

namespace hrformer {

// Every random draw in the library flows from one of these, seeded once.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal(double stddev = 1.0) { return std::normal_distribution<double>(0.0, stddev)(engine_); }
  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

Tensor normal_tensor(Shape shape, Rng& rng, double stddev = 1.0);
Tensor uniform_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0);
// Normal(0, stddev) resampled outside +-2 stddev.
Tensor truncated_normal(Shape shape, Rng& rng, double stddev = 0.02);
// Conv weight [out, in/groups, kh, kw] with std sqrt(2 / fan_out), fan_out = out*kh*kw/groups.
Tensor kaiming_fan_out(Shape shape, Rng& rng, Index groups = 1);

}  // namespace hrformer
