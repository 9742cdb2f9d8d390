#pragma once

#include <string>
#include <vector>

#include "hrformer/model.hpp"

namespace hrformer {

struct GradcheckOptions {
  Index batch = 2;
  Index height = 24;
  Index width = 24;
  double step = 1e-5;
  double fail_threshold = 1e-4;
  // Redraw parameters at a generic point (unit-variance weights, nonzero biases,
  // norm gains near 1) so every group carries gradients well above
  // finite-difference noise.
  bool randomize_parameters = true;
  std::uint64_t seed = 0;
};

struct GroupError {
  std::string group;
  Index scalars = 0;
  double analytic_norm = 0.0;
  // ||analytic - numeric|| / max(||analytic||, ||numeric||) over the group.
  double rel_error = 0.0;
  // Parameter holding the largest absolute discrepancy.
  std::string worst_parameter;
  double worst_abs_diff = 0.0;
};

struct GradcheckReport {
  std::vector<GroupError> groups;
  double max_rel_error = 0.0;
  // Elements re-differenced with a smaller step because of a kink near the point.
  Index refined = 0;
  bool passed = false;
};

// Scalar training loss of the configured head: cross entropy for classification,
// MSE against a fixed target for pose and segmentation.
struct LossFunction {
  Tensor image;
  std::vector<int> labels;
  Tensor target;
  Tensor operator()(const HRFormer& model) const;
};

LossFunction make_check_loss(const HRFormer& model, Index batch, Index height, Index width, Rng& rng);

void randomize_parameters(HRFormer& model, Rng& rng);

GradcheckReport gradcheck(HRFormer& model, const GradcheckOptions& options = {});

std::string format_report(const GradcheckReport& report);

}  // namespace hrformer
