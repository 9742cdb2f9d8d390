#include "hrformer/heads.hpp"

#include <string>

#include "hrformer/error.hpp"

namespace hrformer {

namespace {
// Per-pixel prediction convs start near zero output.
constexpr double kPredictionInitStd = 0.001;
}  // namespace

ClassificationHead ClassificationHead::init(const std::vector<Index>& stream_channels, Index planes, Index features,
                                            Index classes, Rng& rng) {
  ClassificationHead h;
  std::vector<Index> widths;
  for (std::size_t s = 0; s < stream_channels.size(); ++s) {
    const Index p = planes << s;
    h.increase.push_back(Bottleneck::init(stream_channels[s], p, rng, true));
    widths.push_back(p * Bottleneck::kExpansion);
  }
  for (std::size_t s = 0; s + 1 < widths.size(); ++s) {
    h.downsample.push_back(Downsample{ConvBn::init(widths[s], widths[s], 3, 2, rng, false, widths[s], true),
                                      ConvBn::init(widths[s], widths[s + 1], 1, 1, rng, true, 1, true)});
  }
  h.final_layer = ConvBn::init(widths.back(), features, 1, 1, rng, true, 1, true);
  h.fc_weight = truncated_normal({features, classes}, rng);
  h.fc_bias = Tensor::zeros({classes});
  return h;
}

void ClassificationHead::collect(ParameterList& out) const {
  for (std::size_t s = 0; s < increase.size(); ++s) increase[s].collect(out, "head.increase" + std::to_string(s), "head");
  for (std::size_t s = 0; s < downsample.size(); ++s) {
    downsample[s].depthwise.collect(out, "head.downsample" + std::to_string(s) + ".dw", "head");
    downsample[s].pointwise.collect(out, "head.downsample" + std::to_string(s) + ".pw", "head");
  }
  final_layer.collect(out, "head.final", "head");
  out.push_back({"head.fc.weight", "head", fc_weight});
  out.push_back({"head.fc.bias", "head", fc_bias});
}

PoseHead PoseHead::init(Index channels, Index keypoints, Rng& rng) {
  return PoseHead{normal_tensor({keypoints, channels, 1, 1}, rng, kPredictionInitStd), Tensor::zeros({keypoints})};
}

void PoseHead::collect(ParameterList& out) const {
  out.push_back({"head.heatmap.weight", "head", weight});
  out.push_back({"head.heatmap.bias", "head", bias});
}

SegmentationHead SegmentationHead::init(Index concat_channels, Index hidden, Index classes, Rng& rng) {
  return SegmentationHead{ConvBn::init(concat_channels, hidden, 1, 1, rng), normal_tensor({classes, hidden, 1, 1}, rng, kPredictionInitStd),
                          Tensor::zeros({classes})};
}

void SegmentationHead::collect(ParameterList& out) const {
  fuse.collect(out, "head.fuse", "head");
  out.push_back({"head.classifier.weight", "head", weight});
  out.push_back({"head.classifier.bias", "head", bias});
}

Tensor classification_head(const StreamSet& streams, const ClassificationHead& head, const RunOptions& run) {
  if (streams.size() != head.increase.size()) {
    throw ConfigError("classification_head: expected " + std::to_string(head.increase.size()) + " streams, got " +
                      std::to_string(streams.size()));
  }
  Tensor y = head.increase[0].forward(streams[0], run);
  for (std::size_t s = 0; s + 1 < streams.size(); ++s) {
    const auto& ds = head.downsample[s];
    y = add(head.increase[s + 1].forward(streams[s + 1], run),
            ds.pointwise.forward(ds.depthwise.forward(y, run), run));
  }
  y = head.final_layer.forward(y, run);
  return linear(global_avg_pool(y), head.fc_weight, head.fc_bias);
}

Tensor pose_head(const StreamSet& streams, const PoseHead& head) {
  if (streams.empty()) throw ConfigError("pose_head: no streams");
  return conv2d(streams[0], head.weight, head.bias);
}

Tensor segmentation_head(const StreamSet& streams, const SegmentationHead& head, Index out_height, Index out_width,
                         const RunOptions& run) {
  if (streams.empty()) throw ConfigError("segmentation_head: no streams");
  std::vector<Tensor> parts{streams[0]};
  for (std::size_t s = 1; s < streams.size(); ++s) {
    parts.push_back(resize_nearest(streams[s], streams[0].dim(2), streams[0].dim(3)));
  }
  Tensor y = head.fuse.forward(concat_channels(parts), run);
  y = conv2d(y, head.weight, head.bias);
  return resize_nearest(y, out_height, out_width);
}

}  // namespace hrformer
