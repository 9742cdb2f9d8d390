#pragma once

#include "hrformer/ffn.hpp"
#include "hrformer/window_attention.hpp"

namespace hrformer {

struct BlockParams {
  Tensor norm1_gamma, norm1_beta;
  Tensor norm2_gamma, norm2_beta;
  AttentionParams attn;
  FfnParams ffn;

  static BlockParams init(Index channels, Index heads, Index mlp_ratio, Index window, Rng& rng);
  void validate() const;
};

// u = merge(window_mhsa(partition(LN1(x), K))) with the residual taken from x,
// y = u + ffn_dw_forward(LN2(u)). Shape preserving.
Tensor block_forward(const Tensor& x, const BlockParams& params, bool enable_dw = true);

}  // namespace hrformer
