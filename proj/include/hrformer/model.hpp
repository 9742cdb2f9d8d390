#pragma once

#include <optional>

#include "hrformer/heads.hpp"
#include "hrformer/topology.hpp"

namespace hrformer {

/// Backbone plus the head selected by the config, initialized from config.seed.
class HRFormer {
 public:
  explicit HRFormer(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const BackboneParams& backbone() const { return backbone_; }

  StreamSet forward_streams(const Tensor& image, const RunOptions& run = {}, const StageObserver& observe = {}) const;
  // Head output. Segmentation logits are resized to the input image size.
  Tensor forward(const Tensor& image, const RunOptions& run = {}, const StageObserver& observe = {}) const;

  ParameterList parameters() const;
  Index parameter_count() const { return count_scalars(parameters()); }

  std::optional<ClassificationHead>& classification() { return classification_; }
  std::optional<PoseHead>& pose() { return pose_; }
  std::optional<SegmentationHead>& segmentation() { return segmentation_; }

 private:
  ModelConfig config_;
  BackboneParams backbone_;
  std::optional<ClassificationHead> classification_;
  std::optional<PoseHead> pose_;
  std::optional<SegmentationHead> segmentation_;
};

// Output shape of the configured head for an [batch,3,height,width] input, without running the model.
Shape head_output_shape(const ModelConfig& config, Index batch, Index height, Index width);

}  // namespace hrformer
