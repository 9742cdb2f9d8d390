#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hrformer/model.hpp"

namespace hrformer {

enum class ToyTask { synth_class, synth_pose };

std::string_view to_string(ToyTask task);
ToyTask parse_toy_task(std::string_view text);

struct ToyOptions {
  ToyTask task = ToyTask::synth_class;
  int steps = 200;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
  Index samples = 16;
  Index image_size = 32;
};

struct ToyDataset {
  Tensor images;            // [n,3,s,s]
  std::vector<int> labels;  // synth-class
  Tensor heatmaps;          // synth-pose, [n,1,s/4,s/4]
  std::vector<std::pair<Index, Index>> keypoints;  // (row, col) in heatmap pixels
};

// synth-class: horizontal (0) versus vertical (1) stripes of random period and
// phase under additive noise. synth-pose: one bright Gaussian blob per image,
// target heatmap a Gaussian at the blob centre at heatmap resolution.
ToyDataset make_toy_dataset(ToyTask task, Index samples, Index image_size, Rng& rng);

struct ToyResult {
  std::vector<double> losses;  // one per step, measured before the update
  // synth-pose: largest Chebyshev distance between predicted argmax and target after training.
  Index max_keypoint_error = -1;
};

// Full-batch SGD. The model head must match the task (classification or pose).
// Batch-norm statistics move only when the learning rate is nonzero.
// Throws NumericalError naming the step when the loss stops being finite.
ToyResult train_toy(HRFormer& model, const ToyOptions& options);

void write_loss_curve(const std::filesystem::path& path, const std::vector<double>& losses);

// (row, col) of the maximum of each [h,w] map in a [n,k,h,w] tensor, channel 0.
std::vector<std::pair<Index, Index>> heatmap_argmax(const Tensor& heatmaps);

}  // namespace hrformer
