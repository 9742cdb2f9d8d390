#include "hrformer/ffn.hpp"

#include <string>

#include "hrformer/error.hpp"
#include "hrformer/ops.hpp"

namespace hrformer {

FfnParams FfnParams::init(Index channels, Index ratio, Rng& rng) {
  if (channels < 1 || ratio < 1) throw ConfigError("ffn: channels and ratio must be >= 1");
  FfnParams p;
  p.channels = channels;
  p.ratio = ratio;
  const Index hidden = channels * ratio;
  p.w1 = truncated_normal({hidden, channels, 1, 1}, rng);
  p.b1 = Tensor::zeros({hidden});
  p.dw = kaiming_fan_out({hidden, 1, 3, 3}, rng, hidden);
  p.dw_b = Tensor::zeros({hidden});
  p.w2 = truncated_normal({channels, hidden, 1, 1}, rng);
  p.b2 = Tensor::zeros({channels});
  return p;
}

void FfnParams::validate() const {
  const Index h = hidden();
  if (w1.shape() != Shape{h, channels, 1, 1} || b1.size() != h || dw.shape() != Shape{h, 1, 3, 3} ||
      dw_b.size() != h || w2.shape() != Shape{channels, h, 1, 1} || b2.size() != channels) {
    throw ConfigError("ffn: parameter shapes inconsistent with channels " + std::to_string(channels) + ", ratio " +
                      std::to_string(ratio));
  }
}

Tensor ffn_dw_forward(const Tensor& x, const FfnParams& params, bool enable_dw) {
  params.validate();
  if (x.rank() != 4 || x.dim(1) != params.channels) {
    throw ConfigError("ffn: input " + to_string(x.shape()) + " does not have " + std::to_string(params.channels) +
                      " channels");
  }
  Tensor h = gelu(conv2d(x, params.w1, params.b1));
  if (enable_dw) {
    h = gelu(conv2d(h, params.dw, params.dw_b, Conv2dOptions{.stride = 1, .padding = 1, .groups = params.hidden()}));
  }
  return conv2d(h, params.w2, params.b2);
}

}  // namespace hrformer
