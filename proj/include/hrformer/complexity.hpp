#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hrformer/config.hpp"

namespace hrformer {

/// Named node of the complexity tree. Counts live on leaves; interior
/// totals are computed by summation.
struct ComplexityNode {
  std::string name;
  std::int64_t params = 0;
  std::int64_t flops = 0;
  std::vector<ComplexityNode> children;

  std::int64_t total_params() const;
  std::int64_t total_flops() const;
  // Child by name, or nullptr.
  const ComplexityNode* find(const std::string& dotted_path) const;
};

struct ComplexityReport {
  ComplexityNode root;
  std::int64_t batch = 1;
  std::int64_t height = 0;
  std::int64_t width = 0;

  std::int64_t params() const { return root.total_params(); }
  std::int64_t flops() const { return root.total_flops(); }
};

// Static accounting, no tensors allocated. One multiply-accumulate counts as one
// FLOP; norms, activations, softmax, resampling and additions are not counted.
// Attention work is counted over valid query positions, each against all K*K keys.
ComplexityReport analyze(const ModelConfig& config, std::int64_t height, std::int64_t width, std::int64_t batch = 1);
// Learnable scalar count (flops fields left at zero).
ComplexityReport count_params(const ModelConfig& config);
ComplexityReport count_flops(const ModelConfig& config, std::int64_t height, std::int64_t width,
                             std::int64_t batch = 1);

struct SweepRow {
  std::vector<int> windows;  // one entry per stream, applied in every transformer stage
  ComplexityReport report;
};

std::vector<SweepRow> window_sweep(const ModelConfig& config, const std::vector<std::vector<int>>& window_sizes,
                                   std::int64_t height, std::int64_t width);

// Indented human table down to max_depth levels below the root.
std::string format_table(const ComplexityReport& report, int max_depth = 2);
// One "path=<dotted> params=<n> flops=<n>" line per node, then totals.
std::string format_records(const ComplexityReport& report);

}  // namespace hrformer
