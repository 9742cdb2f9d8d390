#pragma once

#include "hrformer/init.hpp"
#include "hrformer/tensor.hpp"

namespace hrformer {

/// Point-wise expansion, 3x3 depth-wise conv, point-wise projection.
struct FfnParams {
  Index channels = 0;
  Index ratio = 0;
  Tensor w1, b1;    // [R*D, D, 1, 1], [R*D]
  Tensor dw, dw_b;  // [R*D, 1, 3, 3], [R*D]
  Tensor w2, b2;    // [D, R*D, 1, 1], [D]

  Index hidden() const { return channels * ratio; }

  static FfnParams init(Index channels, Index ratio, Rng& rng);
  void validate() const;
};

// y = W2 * gelu(DW(gelu(W1 * x))); the DW stage is skipped when enable_dw is false.
// The residual is not included.
Tensor ffn_dw_forward(const Tensor& x, const FfnParams& params, bool enable_dw = true);

}  // namespace hrformer
