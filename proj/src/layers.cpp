#include "hrformer/layers.hpp"

namespace hrformer {

BatchNorm BatchNorm::init(Index channels) {
  return BatchNorm{Tensor::ones({channels}), Tensor::zeros({channels}), Tensor::zeros({channels}),
                   Tensor::ones({channels})};
}

Tensor BatchNorm::forward(const Tensor& x, const RunOptions& run) const {
  Tensor y = batch_norm_inference(x, gamma, beta, running_mean, running_var);
  if (run.training) {
    Tensor mean = running_mean, var = running_var;
    update_batch_norm_stats(x, mean, var, run.bn_momentum);
  }
  return y;
}

void BatchNorm::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gamma", "norm", gamma});
  out.push_back({prefix + ".beta", "norm", beta});
}

ConvBn ConvBn::init(Index in, Index out, Index kernel, Index stride, Rng& rng, bool relu, Index groups, bool bias) {
  ConvBn m;
  m.weight = kaiming_fan_out({out, in / groups, kernel, kernel}, rng, groups);
  if (bias) m.bias = Tensor::zeros({out});
  m.bn = BatchNorm::init(out);
  m.options = Conv2dOptions{.stride = stride, .padding = kernel / 2, .groups = groups};
  m.relu = relu;
  return m;
}

Tensor ConvBn::forward(const Tensor& x, const RunOptions& run) const {
  Tensor y = bias ? conv2d(x, weight, *bias, options) : conv2d(x, weight, options);
  y = bn.forward(y, run);
  return relu ? hrformer::relu(y) : y;
}

void ConvBn::collect(ParameterList& out, const std::string& prefix, const std::string& group) const {
  out.push_back({prefix + ".weight", group, weight});
  if (bias) out.push_back({prefix + ".bias", group, *bias});
  bn.collect(out, prefix + ".bn");
}

Bottleneck Bottleneck::init(Index in, Index planes, Rng& rng, bool depthwise_middle) {
  Bottleneck b;
  b.reduce = ConvBn::init(in, planes, 1, 1, rng);
  b.spatial = ConvBn::init(planes, planes, 3, 1, rng, true, depthwise_middle ? planes : 1);
  b.expand = ConvBn::init(planes, planes * kExpansion, 1, 1, rng, false);
  if (in != planes * kExpansion) b.shortcut = ConvBn::init(in, planes * kExpansion, 1, 1, rng, false);
  return b;
}

Tensor Bottleneck::forward(const Tensor& x, const RunOptions& run) const {
  Tensor y = expand.forward(spatial.forward(reduce.forward(x, run), run), run);
  Tensor skip = shortcut ? shortcut->forward(x, run) : x;
  return relu(add(y, skip));
}

void Bottleneck::collect(ParameterList& out, const std::string& prefix, const std::string& group) const {
  reduce.collect(out, prefix + ".reduce", group);
  spatial.collect(out, prefix + ".spatial", group);
  expand.collect(out, prefix + ".expand", group);
  if (shortcut) shortcut->collect(out, prefix + ".shortcut", group);
}

Index count_scalars(const ParameterList& params) {
  Index n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

}  // namespace hrformer
