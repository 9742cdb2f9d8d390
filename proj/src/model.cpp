#include "hrformer/model.hpp"

#include <numeric>

namespace hrformer {

HRFormer::HRFormer(ModelConfig config) : config_(std::move(config)) {
  validate(config_);
  Rng rng(config_.seed);
  backbone_ = BackboneParams::init(config_, rng);
  std::vector<Index> widths;
  for (int c : config_.stream_channels()) widths.push_back(c);
  switch (config_.head) {
    case HeadKind::classification:
      classification_ = ClassificationHead::init(widths, config_.cls_head_planes, config_.cls_head_features,
                                                 config_.num_classes, rng);
      break;
    case HeadKind::pose:
      pose_ = PoseHead::init(widths.front(), config_.num_keypoints, rng);
      break;
    case HeadKind::segmentation:
      segmentation_ = SegmentationHead::init(std::accumulate(widths.begin(), widths.end(), Index{0}),
                                             config_.seg_head_channels, config_.num_classes, rng);
      break;
  }
}

StreamSet HRFormer::forward_streams(const Tensor& image, const RunOptions& run, const StageObserver& observe) const {
  return model_forward(image, config_, backbone_, run, observe);
}

Tensor HRFormer::forward(const Tensor& image, const RunOptions& run, const StageObserver& observe) const {
  const StreamSet streams = forward_streams(image, run, observe);
  if (classification_) return classification_head(streams, *classification_, run);
  if (pose_) return pose_head(streams, *pose_);
  return segmentation_head(streams, *segmentation_, image.dim(2), image.dim(3), run);
}

ParameterList HRFormer::parameters() const {
  ParameterList out;
  backbone_.collect(out, config_.enable_ffn_dwconv);
  if (classification_) classification_->collect(out);
  if (pose_) pose_->collect(out);
  if (segmentation_) segmentation_->collect(out);
  return out;
}

Shape head_output_shape(const ModelConfig& config, Index batch, Index height, Index width) {
  const auto shapes = stream_shapes(config, height, width);
  switch (config.head) {
    case HeadKind::classification:
      return {batch, config.num_classes};
    case HeadKind::pose:
      return {batch, config.num_keypoints, shapes.front().height, shapes.front().width};
    case HeadKind::segmentation:
      return {batch, config.num_classes, height, width};
  }
  return {};
}

}  // namespace hrformer
