#include "hrformer/complexity.hpp"

#include <cstdio>
#include <numeric>
#include <sstream>

#include "hrformer/error.hpp"

namespace hrformer {

namespace {

using i64 = std::int64_t;

struct Extent {
  i64 h = 0, w = 0;
  i64 positions() const { return h * w; }
};

i64 conv_extent(i64 in, i64 kernel, i64 stride) { return (in + 2 * (kernel / 2) - kernel) / stride + 1; }
Extent conv_extent(Extent in, i64 kernel, i64 stride) {
  return {conv_extent(in.h, kernel, stride), conv_extent(in.w, kernel, stride)};
}

class Builder {
 public:
  Builder(i64 batch, bool with_flops) : batch_(batch), with_flops_(with_flops) {}

  ComplexityNode leaf(std::string name, i64 params, i64 flops) const {
    return ComplexityNode{std::move(name), params, with_flops_ ? flops * batch_ : 0, {}};
  }

  // conv over an output extent; BN adds two affine scalars per output channel.
  ComplexityNode conv(std::string name, i64 in, i64 out, i64 kernel, Extent out_extent, i64 groups = 1,
                      bool bias = false, bool bn = true) const {
    const i64 weights = out * (in / groups) * kernel * kernel;
    return leaf(std::move(name), weights + (bias ? out : 0) + (bn ? 2 * out : 0), out_extent.positions() * weights);
  }

  ComplexityNode bottleneck(std::string name, i64 in, i64 planes, Extent e, bool depthwise_middle) const {
    ComplexityNode n{std::move(name), 0, 0, {}};
    n.children.push_back(conv("reduce", in, planes, 1, e));
    n.children.push_back(conv("spatial", planes, planes, 3, e, depthwise_middle ? planes : 1));
    n.children.push_back(conv("expand", planes, planes * 4, 1, e));
    if (in != planes * 4) n.children.push_back(conv("shortcut", in, planes * 4, 1, e));
    return n;
  }

  ComplexityNode transformer_block(std::string name, i64 c, i64 heads, i64 ratio, i64 window, Extent e,
                                   bool enable_dw) const {
    ComplexityNode n{std::move(name), 0, 0, {}};
    const i64 tokens = e.positions();
    const i64 k2 = window * window;
    const i64 hidden = ratio * c;
    n.children.push_back(leaf("norm1", 2 * c, 0));
    n.children.push_back(leaf("attn.proj", 4 * c * c + 4 * c, tokens * 4 * c * c));
    n.children.push_back(leaf("attn.logits", 0, tokens * k2 * c));
    n.children.push_back(leaf("attn.av", 0, tokens * k2 * c));
    n.children.push_back(leaf("attn.rel_bias", (2 * window - 1) * (2 * window - 1) * heads, 0));
    n.children.push_back(leaf("norm2", 2 * c, 0));
    n.children.push_back(leaf("ffn.fc1", c * hidden + hidden, tokens * c * hidden));
    if (enable_dw) n.children.push_back(leaf("ffn.dw", 9 * hidden + hidden, tokens * 9 * hidden));
    n.children.push_back(leaf("ffn.fc2", hidden * c + c, tokens * hidden * c));
    return n;
  }

 private:
  i64 batch_;
  bool with_flops_;
};

ComplexityReport build(const ModelConfig& config, i64 height, i64 width, i64 batch, bool with_flops) {
  validate(config);
  if (height < 4 || width < 4) throw ConfigError("analyze: input extent must be >= 4");
  Builder b(batch, with_flops);
  ComplexityReport report;
  report.batch = batch;
  report.height = height;
  report.width = width;
  ComplexityNode& root = report.root;
  root.name = config.name;

  const i64 stem_c = config.stem_channels;
  Extent e = conv_extent(Extent{height, width}, 3, 2);
  ComplexityNode stem{"stem", 0, 0, {}};
  stem.children.push_back(b.conv("conv1", 3, stem_c, 3, e));
  e = conv_extent(e, 3, 2);
  stem.children.push_back(b.conv("conv2", stem_c, stem_c, 3, e));
  root.children.push_back(std::move(stem));

  const StageConfig& s0 = config.stages[0];
  const i64 base = config.base_channels();
  ComplexityNode stage1{"stage1", 0, 0, {}};
  i64 in = stem_c;
  for (int i = 0; i < s0.modules * s0.blocks; ++i) {
    stage1.children.push_back(b.bottleneck("block" + std::to_string(i), in, s0.channels, e, false));
    in = s0.channels * 4;
  }
  stage1.children.push_back(b.conv("transition", in, base, 3, e));
  root.children.push_back(std::move(stage1));

  std::vector<i64> widths{base};
  std::vector<Extent> extents{e};
  for (std::size_t t = 1; t < config.stages.size(); ++t) {
    const StageConfig& st = config.stages[t];
    ComplexityNode stage{"stage" + std::to_string(t + 1), 0, 0, {}};
    const Extent low = conv_extent(extents.back(), 3, 2);
    stage.children.push_back(b.conv("new_stream", widths.back(), widths.back() * 2, 3, low));
    widths.push_back(widths.back() * 2);
    extents.push_back(low);
    const std::size_t n = widths.size();
    for (int m = 0; m < st.modules; ++m) {
      ComplexityNode mod{"module" + std::to_string(m), 0, 0, {}};
      for (std::size_t s = 0; s < n; ++s) {
        ComplexityNode stream{"stream" + std::to_string(s), 0, 0, {}};
        for (int k = 0; k < st.blocks; ++k) {
          stream.children.push_back(b.transformer_block("block" + std::to_string(k), widths[s], st.heads[s],
                                                        st.mlp_ratio[s], st.window[s], extents[s],
                                                        config.enable_ffn_dwconv));
        }
        mod.children.push_back(std::move(stream));
      }
      ComplexityNode fuse{"fuse", 0, 0, {}};
      for (std::size_t to = 0; n > 1 && to < n; ++to) {
        for (std::size_t from = 0; from < n; ++from) {
          const std::string name = std::to_string(from) + "to" + std::to_string(to);
          if (from > to) {
            fuse.children.push_back(b.conv(name + ".project", widths[from], widths[to], 1, extents[from]));
          } else if (from < to) {
            ComplexityNode chain{name, 0, 0, {}};
            for (std::size_t k = 0; k < to - from; ++k) {
              const bool last = k + 1 == to - from;
              const i64 c = widths[from];
              const Extent out = extents[from + k + 1];
              chain.children.push_back(b.conv("step" + std::to_string(k) + ".dw", c, c, 3, out, c));
              chain.children.push_back(b.conv("step" + std::to_string(k) + ".pw", c, last ? widths[to] : c, 1, out));
            }
            fuse.children.push_back(std::move(chain));
          }
        }
      }
      if (!fuse.children.empty()) mod.children.push_back(std::move(fuse));
      stage.children.push_back(std::move(mod));
    }
    root.children.push_back(std::move(stage));
  }

  ComplexityNode head{"head", 0, 0, {}};
  switch (config.head) {
    case HeadKind::classification: {
      std::vector<i64> head_widths;
      for (std::size_t s = 0; s < widths.size(); ++s) {
        const i64 planes = static_cast<i64>(config.cls_head_planes) << s;
        head.children.push_back(b.bottleneck("increase" + std::to_string(s), widths[s], planes, extents[s], true));
        head_widths.push_back(planes * 4);
      }
      for (std::size_t s = 0; s + 1 < head_widths.size(); ++s) {
        const i64 c = head_widths[s];
        const std::string name = "downsample" + std::to_string(s);
        head.children.push_back(b.conv(name + ".dw", c, c, 3, extents[s + 1], c, true));
        head.children.push_back(b.conv(name + ".pw", c, head_widths[s + 1], 1, extents[s + 1], 1, true));
      }
      const i64 features = config.cls_head_features;
      head.children.push_back(b.conv("final", head_widths.back(), features, 1, extents.back(), 1, true));
      head.children.push_back(b.leaf("fc", features * config.num_classes + config.num_classes,
                                     features * config.num_classes));
      break;
    }
    case HeadKind::pose:
      head.children.push_back(b.conv("heatmap", widths[0], config.num_keypoints, 1, extents[0], 1, true, false));
      break;
    case HeadKind::segmentation: {
      const i64 concat = std::accumulate(widths.begin(), widths.end(), i64{0});
      head.children.push_back(b.conv("fuse", concat, config.seg_head_channels, 1, extents[0]));
      head.children.push_back(
          b.conv("classifier", config.seg_head_channels, config.num_classes, 1, extents[0], 1, true, false));
      break;
    }
  }
  root.children.push_back(std::move(head));
  return report;
}

void table_rows(const ComplexityNode& n, int depth, int max_depth, std::ostringstream& os) {
  char line[160];
  const std::string label = std::string(static_cast<std::size_t>(2 * depth), ' ') + n.name;
  std::snprintf(line, sizeof line, "%-44s %14lld %12.3f %16lld %10.3f\n", label.c_str(),
                static_cast<long long>(n.total_params()), static_cast<double>(n.total_params()) / 1e6,
                static_cast<long long>(n.total_flops()), static_cast<double>(n.total_flops()) / 1e9);
  os << line;
  if (depth >= max_depth) return;
  for (const auto& c : n.children) table_rows(c, depth + 1, max_depth, os);
}

void record_rows(const ComplexityNode& n, const std::string& prefix, std::ostringstream& os) {
  const std::string path = prefix.empty() ? n.name : prefix + "." + n.name;
  os << "path=" << path << " params=" << n.total_params() << " flops=" << n.total_flops() << '\n';
  for (const auto& c : n.children) record_rows(c, path, os);
}

}  // namespace

std::int64_t ComplexityNode::total_params() const {
  if (children.empty()) return params;
  std::int64_t s = 0;
  for (const auto& c : children) s += c.total_params();
  return s;
}

std::int64_t ComplexityNode::total_flops() const {
  if (children.empty()) return flops;
  std::int64_t s = 0;
  for (const auto& c : children) s += c.total_flops();
  return s;
}

const ComplexityNode* ComplexityNode::find(const std::string& dotted_path) const {
  const ComplexityNode* node = this;
  std::size_t start = 0;
  while (start <= dotted_path.size()) {
    // names may contain dots (e.g. "attn.proj"), so try the longest matching child first
    const ComplexityNode* next = nullptr;
    std::size_t consumed = 0;
    for (const auto& c : node->children) {
      if (dotted_path.compare(start, c.name.size(), c.name) == 0) {
        const std::size_t end = start + c.name.size();
        if ((end == dotted_path.size() || dotted_path[end] == '.') && c.name.size() > consumed) {
          next = &c;
          consumed = c.name.size();
        }
      }
    }
    if (!next) return nullptr;
    node = next;
    start += consumed + 1;
    if (start > dotted_path.size()) return node;
  }
  return node;
}

ComplexityReport analyze(const ModelConfig& config, std::int64_t height, std::int64_t width, std::int64_t batch) {
  return build(config, height, width, batch, true);
}

ComplexityReport count_params(const ModelConfig& config) { return build(config, 224, 224, 1, false); }

ComplexityReport count_flops(const ModelConfig& config, std::int64_t height, std::int64_t width, std::int64_t batch) {
  return build(config, height, width, batch, true);
}

std::vector<SweepRow> window_sweep(const ModelConfig& config, const std::vector<std::vector<int>>& window_sizes,
                                   std::int64_t height, std::int64_t width) {
  std::vector<SweepRow> rows;
  for (const auto& windows : window_sizes) {
    ModelConfig c = config;
    for (std::size_t t = 1; t < c.stages.size(); ++t) {
      if (windows.size() < t + 1) {
        throw ConfigError("window_sweep: tuple has " + std::to_string(windows.size()) + " entries, need " +
                          std::to_string(c.stages.size()));
      }
      c.stages[t].window.assign(windows.begin(), windows.begin() + static_cast<std::ptrdiff_t>(t + 1));
    }
    rows.push_back(SweepRow{windows, analyze(c, height, width)});
  }
  return rows;
}

std::string format_table(const ComplexityReport& report, int max_depth) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-44s %14s %12s %16s %10s\n", "module", "params", "params(M)", "flops",
                "flops(G)");
  os << "input " << report.batch << "x3x" << report.height << "x" << report.width << '\n' << line;
  table_rows(report.root, 0, max_depth, os);
  return os.str();
}

std::string format_records(const ComplexityReport& report) {
  std::ostringstream os;
  record_rows(report.root, "", os);
  os << "total.params=" << report.params() << '\n';
  os << "total.flops=" << report.flops() << '\n';
  os << "input=" << report.batch << "x3x" << report.height << "x" << report.width << '\n';
  return os.str();
}

}  // namespace hrformer
