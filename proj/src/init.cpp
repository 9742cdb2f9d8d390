#include "hrformer/init.hpp"

#include <cmath>

namespace hrformer {

Tensor normal_tensor(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(stddev);
  return t;
}

Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor truncated_normal(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) {
    do {
      v = rng.normal(stddev);
    } while (std::abs(v) > 2.0 * stddev);
  }
  return t;
}

Tensor kaiming_fan_out(Shape shape, Rng& rng, Index groups) {
  const Index fan_out = shape.at(0) * shape.at(2) * shape.at(3) / groups;
  return normal_tensor(std::move(shape), rng, std::sqrt(2.0 / static_cast<double>(fan_out)));
}

}  // namespace hrformer
