#include "hrformer/block.hpp"

#include "hrformer/error.hpp"
#include "hrformer/ops.hpp"

namespace hrformer {

BlockParams BlockParams::init(Index channels, Index heads, Index mlp_ratio, Index window, Rng& rng) {
  BlockParams p;
  p.norm1_gamma = Tensor::ones({channels});
  p.norm1_beta = Tensor::zeros({channels});
  p.norm2_gamma = Tensor::ones({channels});
  p.norm2_beta = Tensor::zeros({channels});
  p.attn = AttentionParams::init(channels, heads, window, rng);
  p.ffn = FfnParams::init(channels, mlp_ratio, rng);
  return p;
}

void BlockParams::validate() const {
  const Index d = attn.channels;
  if (ffn.channels != d || norm1_gamma.size() != d || norm1_beta.size() != d || norm2_gamma.size() != d ||
      norm2_beta.size() != d) {
    throw ConfigError("block: channel extents differ between norms, attention and ffn");
  }
  attn.validate();
  ffn.validate();
}

Tensor block_forward(const Tensor& x, const BlockParams& params, bool enable_dw) {
  params.validate();
  const Tensor normed = layer_norm(x, params.norm1_gamma, params.norm1_beta);
  const WindowSet attended = window_mhsa(partition_windows(normed, params.attn.window), params.attn, false);
  const Tensor u = add(x, merge_windows(attended));
  return add(u, ffn_dw_forward(layer_norm(u, params.norm2_gamma, params.norm2_beta), params.ffn, enable_dw));
}

}  // namespace hrformer
