#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace hrformer {

/// One stage of the network. Stage 0 is the convolutional bottleneck stage,
/// where `channels` is the bottleneck width (output is 4x that) and the
/// per-stream lists are unused. Transformer stage i (i >= 1) runs i+1 streams;
/// stream s has channels * 2^s channels at stride 4 * 2^s.
struct StageConfig {
  int modules = 1;
  int blocks = 2;
  int channels = 64;
  std::vector<int> heads;
  std::vector<int> mlp_ratio;
  std::vector<int> window;

  bool operator==(const StageConfig&) const = default;
};

enum class HeadKind { classification, pose, segmentation };

std::string_view to_string(HeadKind kind);
HeadKind parse_head_kind(std::string_view text);

struct ModelConfig {
  std::string name = "custom";
  std::vector<StageConfig> stages;  // 1 to 4 entries
  HeadKind head = HeadKind::classification;
  int num_classes = 1000;
  int num_keypoints = 17;
  bool enable_ffn_dwconv = true;
  std::uint64_t seed = 0;

  int stem_channels = 64;
  int cls_head_planes = 32;      // bottleneck width of stream 0 in the classification head
  int cls_head_features = 2048;  // width before global pooling
  int seg_head_channels = 512;

  int stream_count() const { return static_cast<int>(stages.size()); }
  // Base width C shared by all transformer stages (stream s carries C * 2^s).
  int base_channels() const;
  std::vector<int> stream_channels() const;

  bool operator==(const ModelConfig&) const = default;
};

// "hrformer-t", "hrformer-s", "hrformer-b" or "micro". Throws ConfigError otherwise.
ModelConfig preset(std::string_view name);
std::vector<std::string> preset_names();

// Throws ConfigError describing the first violated rule.
void validate(const ModelConfig& config);

// Applies one "key = value" assignment; see parse_config for the key set.
void apply_setting(ModelConfig& config, std::string_view key, std::string_view value);

/// Line-oriented config text:
///
///   # comment
///   preset = hrformer-t            (optional, must come first)
///   num_stages = 2
///   stages[1].heads = [1, 2]
///   head = classification
///
/// Keys: preset, num_stages, head, num_classes, num_keypoints,
/// enable_ffn_dwconv, seed, stem_channels, cls_head_planes,
/// cls_head_features, seg_head_channels and
/// stages[i].{modules, blocks, channels, heads, mlp_ratio, window}.
/// Errors are reported as ConfigError with "line N:" prefixes.
ModelConfig parse_config(std::istream& is);
ModelConfig load_config(const std::filesystem::path& path);
std::string format_config(const ModelConfig& config);

}  // namespace hrformer
