#pragma once

#include <vector>

#include "hrformer/layers.hpp"
#include "hrformer/topology.hpp"

namespace hrformer {

/// Per-stream bottlenecks widen stream s to 4 * planes * 2^s channels
/// (128, 256, 512, 1024 for planes = 32); strided depth-wise separable convs
/// fold each stream into the next lower resolution; a 1x1 conv lifts the
/// lowest map to `features` channels before global pooling and the classifier.
struct ClassificationHead {
  struct Downsample {
    ConvBn depthwise;  // 3x3 stride 2, with bias, no ReLU
    ConvBn pointwise;  // 1x1, with bias, ReLU
  };
  std::vector<Bottleneck> increase;
  std::vector<Downsample> downsample;
  ConvBn final_layer;
  Tensor fc_weight;  // [features, classes]
  Tensor fc_bias;    // [classes]

  static ClassificationHead init(const std::vector<Index>& stream_channels, Index planes, Index features,
                                 Index classes, Rng& rng);
  void collect(ParameterList& out) const;
};

/// 1x1 conv on the highest-resolution stream producing one heatmap per keypoint.
struct PoseHead {
  Tensor weight, bias;
  static PoseHead init(Index channels, Index keypoints, Rng& rng);
  void collect(ParameterList& out) const;
};

/// Upsample all streams to the highest resolution, concatenate, 1x1 conv+BN+ReLU,
/// 1x1 classifier conv, resize to the requested output size.
struct SegmentationHead {
  ConvBn fuse;
  Tensor weight, bias;
  static SegmentationHead init(Index concat_channels, Index hidden, Index classes, Rng& rng);
  void collect(ParameterList& out) const;
};

// -> logits [n, classes]
Tensor classification_head(const StreamSet& streams, const ClassificationHead& head, const RunOptions& run = {});
// -> heatmaps [n, keypoints, h0, w0]
Tensor pose_head(const StreamSet& streams, const PoseHead& head);
// -> logits [n, classes, out_height, out_width]
Tensor segmentation_head(const StreamSet& streams, const SegmentationHead& head, Index out_height, Index out_width,
                         const RunOptions& run = {});

}  // namespace hrformer
