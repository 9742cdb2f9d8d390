#include "hrformer/topology.hpp"

#include <string>

#include "hrformer/error.hpp"

namespace hrformer {

namespace {
std::string stream_name(const std::string& prefix, std::size_t s) { return prefix + ".stream" + std::to_string(s); }
}  // namespace

StemParams StemParams::init(Index channels, Rng& rng) {
  return StemParams{ConvBn::init(3, channels, 3, 2, rng), ConvBn::init(channels, channels, 3, 2, rng)};
}

Stage1Params Stage1Params::init(const StageConfig& stage, Index stem_channels, Index base_channels, Rng& rng) {
  Stage1Params p;
  Index in = stem_channels;
  for (int i = 0; i < stage.modules * stage.blocks; ++i) {
    p.blocks.push_back(Bottleneck::init(in, stage.channels, rng));
    in = stage.channels * Bottleneck::kExpansion;
  }
  p.transition = ConvBn::init(in, base_channels, 3, 1, rng);
  return p;
}

FuseParams FuseParams::init(const std::vector<Index>& channels, Rng& rng) {
  FuseParams p;
  const std::size_t n = channels.size();
  if (n < 2) return p;
  p.branches.resize(n);
  for (std::size_t to = 0; to < n; ++to) {
    for (std::size_t from = 0; from < n; ++from) {
      FuseBranch b;
      if (from > to) {
        b.kind = FuseBranch::Kind::upsample;
        b.project = ConvBn::init(channels[from], channels[to], 1, 1, rng, false);
      } else if (from < to) {
        b.kind = FuseBranch::Kind::downsample;
        for (std::size_t k = 0; k < to - from; ++k) {
          const bool last = k + 1 == to - from;
          const Index c = channels[from];
          b.steps.push_back(FuseBranch::DownStep{ConvBn::init(c, c, 3, 2, rng, false, c),
                                                 ConvBn::init(c, last ? channels[to] : c, 1, 1, rng, !last)});
        }
      }
      p.branches[to].push_back(std::move(b));
    }
  }
  return p;
}

TransformerStage TransformerStage::init(const StageConfig& stage, Index stage_index, Rng& rng) {
  TransformerStage t;
  const Index streams = stage_index + 1;
  const Index lowest = static_cast<Index>(stage.channels) << (streams - 2);
  t.new_stream = ConvBn::init(lowest, lowest * 2, 3, 2, rng);
  std::vector<Index> widths;
  for (Index s = 0; s < streams; ++s) widths.push_back(static_cast<Index>(stage.channels) << s);
  for (int m = 0; m < stage.modules; ++m) {
    TransformerModule mod;
    mod.blocks.resize(static_cast<std::size_t>(streams));
    for (Index s = 0; s < streams; ++s) {
      const auto su = static_cast<std::size_t>(s);
      for (int b = 0; b < stage.blocks; ++b) {
        mod.blocks[su].push_back(
            BlockParams::init(widths[su], stage.heads[su], stage.mlp_ratio[su], stage.window[su], rng));
      }
    }
    mod.fuse = FuseParams::init(widths, rng);
    t.modules.push_back(std::move(mod));
  }
  return t;
}

BackboneParams BackboneParams::init(const ModelConfig& config, Rng& rng) {
  validate(config);
  BackboneParams p;
  p.stem = StemParams::init(config.stem_channels, rng);
  p.stage1 = Stage1Params::init(config.stages[0], config.stem_channels, config.base_channels(), rng);
  for (std::size_t i = 1; i < config.stages.size(); ++i) {
    p.stages.push_back(TransformerStage::init(config.stages[i], static_cast<Index>(i), rng));
  }
  return p;
}

void BackboneParams::collect(ParameterList& out, bool include_dw) const {
  stem.conv1.collect(out, "stem.conv1", "stem");
  stem.conv2.collect(out, "stem.conv2", "stem");
  for (std::size_t i = 0; i < stage1.blocks.size(); ++i)
    stage1.blocks[i].collect(out, "stage1.block" + std::to_string(i), "stage1");
  stage1.transition.collect(out, "stage1.transition", "transition");
  for (std::size_t t = 0; t < stages.size(); ++t) {
    const std::string sp = "stage" + std::to_string(t + 2);
    stages[t].new_stream.collect(out, sp + ".new_stream", "transition");
    for (std::size_t m = 0; m < stages[t].modules.size(); ++m) {
      const TransformerModule& mod = stages[t].modules[m];
      const std::string mp = sp + ".module" + std::to_string(m);
      for (std::size_t s = 0; s < mod.blocks.size(); ++s) {
        for (std::size_t b = 0; b < mod.blocks[s].size(); ++b) {
          const BlockParams& bp = mod.blocks[s][b];
          const std::string bn = stream_name(mp, s) + ".block" + std::to_string(b);
          out.push_back({bn + ".norm1.gamma", "norm", bp.norm1_gamma});
          out.push_back({bn + ".norm1.beta", "norm", bp.norm1_beta});
          out.push_back({bn + ".attn.w_q", "attention", bp.attn.w_q});
          out.push_back({bn + ".attn.b_q", "attention", bp.attn.b_q});
          out.push_back({bn + ".attn.w_k", "attention", bp.attn.w_k});
          out.push_back({bn + ".attn.b_k", "attention", bp.attn.b_k});
          out.push_back({bn + ".attn.w_v", "attention", bp.attn.w_v});
          out.push_back({bn + ".attn.b_v", "attention", bp.attn.b_v});
          out.push_back({bn + ".attn.w_o", "attention", bp.attn.w_o});
          out.push_back({bn + ".attn.b_o", "attention", bp.attn.b_o});
          out.push_back({bn + ".attn.rel_bias", "rel_bias", bp.attn.rel_bias});
          out.push_back({bn + ".norm2.gamma", "norm", bp.norm2_gamma});
          out.push_back({bn + ".norm2.beta", "norm", bp.norm2_beta});
          out.push_back({bn + ".ffn.w1", "ffn", bp.ffn.w1});
          out.push_back({bn + ".ffn.b1", "ffn", bp.ffn.b1});
          if (include_dw) {
            out.push_back({bn + ".ffn.dw", "dw_kernel", bp.ffn.dw});
            out.push_back({bn + ".ffn.dw_b", "dw_kernel", bp.ffn.dw_b});
          }
          out.push_back({bn + ".ffn.w2", "ffn", bp.ffn.w2});
          out.push_back({bn + ".ffn.b2", "ffn", bp.ffn.b2});
        }
      }
      for (std::size_t to = 0; to < mod.fuse.branches.size(); ++to) {
        for (std::size_t from = 0; from < mod.fuse.branches[to].size(); ++from) {
          const FuseBranch& b = mod.fuse.branches[to][from];
          const std::string fp = mp + ".fuse" + std::to_string(from) + "to" + std::to_string(to);
          if (b.kind == FuseBranch::Kind::upsample) b.project.collect(out, fp + ".project", "fusion");
          for (std::size_t k = 0; k < b.steps.size(); ++k) {
            b.steps[k].depthwise.collect(out, fp + ".step" + std::to_string(k) + ".dw", "fusion");
            b.steps[k].pointwise.collect(out, fp + ".step" + std::to_string(k) + ".pw", "fusion");
          }
        }
      }
    }
  }
}

Tensor stem_forward(const Tensor& image, const StemParams& params, const RunOptions& run) {
  if (image.rank() != 4 || image.dim(1) != 3) {
    throw DimensionError("stem: expected a [n,3,h,w] image, got " + to_string(image.shape()));
  }
  if (image.dim(2) < 4 || image.dim(3) < 4) {
    throw ConfigError("stem: spatial extent must be >= 4, got " + to_string(image.shape()));
  }
  return params.conv2.forward(params.conv1.forward(image, run), run);
}

Tensor stage1_forward(const Tensor& x, const Stage1Params& params, const RunOptions& run) {
  Tensor y = x;
  for (const auto& b : params.blocks) y = b.forward(y, run);
  return params.transition.forward(y, run);
}

StreamSet add_stream(const StreamSet& streams, const ConvBn& new_stream, const RunOptions& run) {
  if (streams.empty()) throw ConfigError("add_stream: no streams");
  StreamSet out = streams;
  out.push_back(new_stream.forward(streams.back(), run));
  return out;
}

StreamSet fuse_streams(const StreamSet& streams, const FuseParams& params, const RunOptions& run) {
  if (streams.size() < 2) return streams;
  if (params.branches.size() != streams.size()) throw ConfigError("fuse_streams: stream count differs from fusion params");
  StreamSet out;
  for (std::size_t to = 0; to < streams.size(); ++to) {
    Tensor acc;
    bool first = true;
    for (std::size_t from = 0; from < streams.size(); ++from) {
      const FuseBranch& b = params.branches[to][from];
      Tensor term;
      switch (b.kind) {
        case FuseBranch::Kind::identity:
          term = streams[from];
          break;
        case FuseBranch::Kind::upsample:
          term = resize_nearest(b.project.forward(streams[from], run), streams[to].dim(2), streams[to].dim(3));
          break;
        case FuseBranch::Kind::downsample:
          term = streams[from];
          for (const auto& step : b.steps) term = step.pointwise.forward(step.depthwise.forward(term, run), run);
          break;
      }
      acc = first ? term : add(acc, term);
      first = false;
    }
    out.push_back(relu(acc));
  }
  return out;
}

StreamSet model_forward(const Tensor& image, const ModelConfig& config, const BackboneParams& params,
                        const RunOptions& run, const StageObserver& observe) {
  StreamSet streams{stem_forward(image, params.stem, run)};
  if (observe) observe("stem", streams);
  streams = {stage1_forward(streams.front(), params.stage1, run)};
  if (observe) observe("stage1", streams);
  for (std::size_t t = 0; t < params.stages.size(); ++t) {
    const TransformerStage& stage = params.stages[t];
    streams = add_stream(streams, stage.new_stream, run);
    for (const TransformerModule& mod : stage.modules) {
      for (std::size_t s = 0; s < streams.size(); ++s) {
        for (const BlockParams& b : mod.blocks[s]) streams[s] = block_forward(streams[s], b, config.enable_ffn_dwconv);
      }
      streams = fuse_streams(streams, mod.fuse, run);
    }
    if (observe) observe("stage" + std::to_string(t + 2), streams);
  }
  return streams;
}

MapShape stem_shape(const ModelConfig& config, Index height, Index width) {
  if (height < 4 || width < 4) throw ConfigError("stem: spatial extent must be >= 4");
  Index h = height, w = width;
  for (int i = 0; i < 2; ++i) {
    h = conv_output_extent(h, 3, 2, 1);
    w = conv_output_extent(w, 3, 2, 1);
  }
  return MapShape{config.stem_channels, h, w};
}

std::vector<MapShape> stream_shapes(const ModelConfig& config, Index height, Index width) {
  validate(config);
  const MapShape stem = stem_shape(config, height, width);
  std::vector<MapShape> shapes{MapShape{config.base_channels(), stem.height, stem.width}};
  for (std::size_t t = 1; t < config.stages.size(); ++t) {
    const MapShape& low = shapes.back();
    shapes.push_back(MapShape{low.channels * 2, conv_output_extent(low.height, 3, 2, 1),
                              conv_output_extent(low.width, 3, 2, 1)});
  }
  return shapes;
}

}  // namespace hrformer
