#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "hrformer/init.hpp"
#include "hrformer/ops.hpp"

namespace hrformer::testing {

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

// Contracts f's output against fixed random weights so every output entry
// contributes, then compares analytic and central-difference gradients for
// every input. Returns the worst normwise relative error over the inputs.
inline double finite_difference_error(const Fn& f, std::vector<Tensor> inputs, std::uint64_t seed = 7,
                                      double step = 1e-5) {
  Rng rng(seed);
  Tensor probe;
  auto loss = [&](const std::vector<Tensor>& in) {
    Tensor y = f(in);
    if (probe.size() != y.size()) probe = normal_tensor(y.shape(), rng);
    return sum(mul(y, probe));
  };
  for (Tensor& t : inputs) t.set_requires_grad(true);
  {
    GradTape tape;
    TapeScope scope(tape);
    tape.backward(loss(inputs));
  }
  double worst = 0.0;
  for (Tensor& t : inputs) {
    t.set_requires_grad(false);
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    auto v = t.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + step;
      const double up = loss(inputs)[0];
      v[i] = saved - step;
      const double down = loss(inputs)[0];
      v[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
    const double denom = std::max(std::sqrt(a2), std::sqrt(n2));
    if (denom > 0.0) worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (Index i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace hrformer::testing
