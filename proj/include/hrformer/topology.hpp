#pragma once

#include <functional>
#include <string_view>
#include <vector>

#include "hrformer/block.hpp"
#include "hrformer/config.hpp"
#include "hrformer/layers.hpp"

namespace hrformer {

/// One feature map per active resolution stream, highest resolution first.
using StreamSet = std::vector<Tensor>;

struct StemParams {
  ConvBn conv1, conv2;  // 3x3 stride 2 each
  static StemParams init(Index channels, Rng& rng);
};

struct Stage1Params {
  std::vector<Bottleneck> blocks;
  ConvBn transition;  // 3x3, 4*planes -> C
  static Stage1Params init(const StageConfig& stage, Index stem_channels, Index base_channels, Rng& rng);
};

/// Resampling applied to stream `from` when summed into stream `to`.
struct FuseBranch {
  enum class Kind { identity, upsample, downsample };
  struct DownStep {
    ConvBn depthwise;  // 3x3 stride 2, groups = channels
    ConvBn pointwise;  // 1x1, ReLU on all but the last step
  };
  Kind kind = Kind::identity;
  ConvBn project;  // upsample: 1x1 conv + BN, then nearest resize
  std::vector<DownStep> steps;
};

struct FuseParams {
  std::vector<std::vector<FuseBranch>> branches;  // [to][from]
  static FuseParams init(const std::vector<Index>& channels, Rng& rng);
};

struct TransformerModule {
  std::vector<std::vector<BlockParams>> blocks;  // [stream][block]
  FuseParams fuse;                               // empty for a single stream
};

struct TransformerStage {
  ConvBn new_stream;  // 3x3 stride 2 from the lowest stream, doubling channels
  std::vector<TransformerModule> modules;
  static TransformerStage init(const StageConfig& stage, Index stage_index, Rng& rng);
};

struct BackboneParams {
  StemParams stem;
  Stage1Params stage1;
  std::vector<TransformerStage> stages;
  static BackboneParams init(const ModelConfig& config, Rng& rng);
  // Depth-wise FFN kernels are left out when the model runs without them.
  void collect(ParameterList& out, bool include_dw = true) const;
};

// Two 3x3 stride-2 conv+BN+ReLU layers: image [n,3,h,w] -> stride 4.
Tensor stem_forward(const Tensor& image, const StemParams& params, const RunOptions& run = {});
// Bottleneck blocks then the transition conv to the base width.
Tensor stage1_forward(const Tensor& x, const Stage1Params& params, const RunOptions& run = {});
// Appends a stream derived from the current lowest-resolution one.
StreamSet add_stream(const StreamSet& streams, const ConvBn& new_stream, const RunOptions& run = {});
// out_r = ReLU(sum_s f_{s->r}(stream_s)); a single stream passes through.
StreamSet fuse_streams(const StreamSet& streams, const FuseParams& params, const RunOptions& run = {});

using StageObserver = std::function<void(std::string_view stage, const StreamSet& streams)>;

StreamSet model_forward(const Tensor& image, const ModelConfig& config, const BackboneParams& params,
                        const RunOptions& run = {}, const StageObserver& observe = {});

struct MapShape {
  Index channels = 0, height = 0, width = 0;
  bool operator==(const MapShape&) const = default;
};

// Shape-only dry run of the backbone using conv arithmetic.
std::vector<MapShape> stream_shapes(const ModelConfig& config, Index height, Index width);
// Stem output extents; throws ConfigError for inputs smaller than 4 pixels.
MapShape stem_shape(const ModelConfig& config, Index height, Index width);

}  // namespace hrformer
