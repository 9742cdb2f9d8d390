#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hrformer/init.hpp"
#include "hrformer/ops.hpp"

namespace hrformer {

struct RunOptions {
  // Training moves batch-norm running statistics toward batch statistics.
  bool training = false;
  double bn_momentum = 0.1;
};

struct NamedParameter {
  std::string name;
  std::string group;
  Tensor tensor;
};
using ParameterList = std::vector<NamedParameter>;

struct BatchNorm {
  Tensor gamma, beta;                // learnable
  Tensor running_mean, running_var;  // buffers

  static BatchNorm init(Index channels);
  Tensor forward(const Tensor& x, const RunOptions& run) const;
  void collect(ParameterList& out, const std::string& prefix) const;
};

/// Conv (optionally with bias) followed by batch norm and an optional ReLU.
struct ConvBn {
  Tensor weight;
  std::optional<Tensor> bias;
  BatchNorm bn;
  Conv2dOptions options;
  bool relu = true;

  static ConvBn init(Index in, Index out, Index kernel, Index stride, Rng& rng, bool relu = true,
                     Index groups = 1, bool bias = false);
  Tensor forward(const Tensor& x, const RunOptions& run) const;
  void collect(ParameterList& out, const std::string& prefix, const std::string& group) const;
};

/// 1x1 reduce -> 3x3 -> 1x1 expand (4x) residual block; a 1x1 conv+BN
/// shortcut is present when input and output widths differ.
struct Bottleneck {
  ConvBn reduce, spatial, expand;
  std::optional<ConvBn> shortcut;

  static constexpr Index kExpansion = 4;
  // depthwise_middle selects a depth-wise 3x3 middle conv.
  static Bottleneck init(Index in, Index planes, Rng& rng, bool depthwise_middle = false);
  Tensor forward(const Tensor& x, const RunOptions& run) const;
  void collect(ParameterList& out, const std::string& prefix, const std::string& group) const;
};

Index count_scalars(const ParameterList& params);

}  // namespace hrformer
