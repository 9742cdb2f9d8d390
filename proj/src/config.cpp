#include "hrformer/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <istream>
#include <sstream>

#include "hrformer/error.hpp"

namespace hrformer {

std::string_view to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::classification:
      return "classification";
    case HeadKind::pose:
      return "pose";
    case HeadKind::segmentation:
      return "segmentation";
  }
  return "unknown";
}

HeadKind parse_head_kind(std::string_view text) {
  if (text == "classification" || text == "cls") return HeadKind::classification;
  if (text == "pose") return HeadKind::pose;
  if (text == "segmentation" || text == "seg") return HeadKind::segmentation;
  throw ConfigError("unknown head kind '" + std::string(text) + "' (classification, pose, segmentation)");
}

int ModelConfig::base_channels() const {
  if (stages.size() < 2) return stages.empty() ? 0 : stages[0].channels * 4;
  return stages[1].channels;
}

std::vector<int> ModelConfig::stream_channels() const {
  std::vector<int> out;
  if (stages.size() < 2) {
    out.push_back(base_channels());
    return out;
  }
  for (int s = 0; s < stream_count(); ++s) out.push_back(base_channels() << s);
  return out;
}

namespace {

StageConfig bottleneck_stage() { return StageConfig{1, 2, 64, {}, {}, {}}; }

StageConfig transformer_stage(int modules, int channels, std::vector<int> heads, int window = 7) {
  const auto n = heads.size();
  return StageConfig{modules, 2, channels, heads, std::vector<int>(n, 4), std::vector<int>(n, window)};
}

ModelConfig hrformer_instance(std::string name, std::vector<int> modules, int channels, std::vector<int> heads) {
  ModelConfig c;
  c.name = std::move(name);
  c.stages.push_back(bottleneck_stage());
  for (int t = 1; t < 4; ++t) {
    std::vector<int> h(heads.begin(), heads.begin() + t + 1);
    c.stages.push_back(transformer_stage(modules[static_cast<std::size_t>(t)], channels, h));
  }
  return c;
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

int parse_int(std::string_view text, std::string_view key) {
  const std::string t = trim(text);
  int value = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size()) {
    throw ConfigError("key '" + std::string(key) + "': expected an integer, got '" + t + "'");
  }
  return value;
}

std::vector<int> parse_int_list(std::string_view text, std::string_view key) {
  std::string t = trim(text);
  if (!t.empty() && t.front() == '[') {
    if (t.back() != ']') throw ConfigError("key '" + std::string(key) + "': unterminated list");
    t = t.substr(1, t.size() - 2);
  }
  std::vector<int> out;
  std::stringstream ss(t);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) throw ConfigError("key '" + std::string(key) + "': empty list element");
    out.push_back(parse_int(item, key));
  }
  return out;
}

bool parse_bool(std::string_view text, std::string_view key) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError("key '" + std::string(key) + "': expected true/false, got '" + t + "'");
}

std::string join(const std::vector<int>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(v[i]);
  }
  return s + "]";
}

}  // namespace

ModelConfig preset(std::string_view name) {
  if (name == "hrformer-t") return hrformer_instance("hrformer-t", {1, 1, 3, 2}, 18, {1, 2, 4, 8});
  if (name == "hrformer-s") return hrformer_instance("hrformer-s", {1, 1, 4, 2}, 32, {1, 2, 4, 8});
  if (name == "hrformer-b") return hrformer_instance("hrformer-b", {1, 1, 4, 2}, 78, {2, 4, 8, 16});
  if (name == "micro") {
    ModelConfig c;
    c.name = "micro";
    c.stem_channels = 8;
    c.stages.push_back(StageConfig{1, 1, 4, {}, {}, {}});
    c.stages.push_back(StageConfig{1, 1, 4, {1, 2}, {2, 2}, {4, 2}});
    c.num_classes = 2;
    c.num_keypoints = 1;
    c.cls_head_planes = 2;
    c.cls_head_features = 16;
    c.seg_head_channels = 8;
    return c;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "' (hrformer-t, hrformer-s, hrformer-b, micro)");
}

std::vector<std::string> preset_names() { return {"hrformer-t", "hrformer-s", "hrformer-b", "micro"}; }

void validate(const ModelConfig& c) {
  if (c.stages.empty() || c.stages.size() > 4) {
    throw ConfigError("model needs 1 to 4 stages, got " + std::to_string(c.stages.size()));
  }
  if (c.stem_channels < 1) throw ConfigError("stem_channels must be >= 1");
  const StageConfig& s0 = c.stages[0];
  if (s0.modules < 1 || s0.blocks < 1 || s0.channels < 1) {
    throw ConfigError("stages[0]: modules, blocks and channels must be >= 1");
  }
  for (std::size_t i = 1; i < c.stages.size(); ++i) {
    const StageConfig& s = c.stages[i];
    const std::string where = "stages[" + std::to_string(i) + "]";
    if (s.modules < 1 || s.blocks < 1 || s.channels < 1) {
      throw ConfigError(where + ": modules, blocks and channels must be >= 1");
    }
    if (s.channels != c.stages[1].channels) {
      throw ConfigError(where + ": channels must equal stages[1].channels (" + std::to_string(c.stages[1].channels) +
                        ")");
    }
    const std::size_t streams = i + 1;
    if (s.heads.size() != streams || s.mlp_ratio.size() != streams || s.window.size() != streams) {
      throw ConfigError(where + ": heads, mlp_ratio and window need " + std::to_string(streams) + " entries");
    }
    for (std::size_t st = 0; st < streams; ++st) {
      const int width = s.channels << st;
      if (s.heads[st] < 1 || width % s.heads[st] != 0) {
        throw ConfigError(where + ": stream " + std::to_string(st) + " width " + std::to_string(width) +
                          " not divisible by " + std::to_string(s.heads[st]) + " heads");
      }
      if (s.mlp_ratio[st] < 1) throw ConfigError(where + ": mlp_ratio must be >= 1");
      if (s.window[st] < 1) throw ConfigError(where + ": window must be >= 1");
    }
  }
  if (c.num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (c.num_keypoints < 1) throw ConfigError("num_keypoints must be >= 1");
  if (c.cls_head_planes < 1 || c.cls_head_features < 1 || c.seg_head_channels < 1) {
    throw ConfigError("head widths must be >= 1");
  }
}

void apply_setting(ModelConfig& c, std::string_view key_in, std::string_view value) {
  const std::string key = trim(key_in);
  const std::string val = trim(value);
  if (key == "preset") {
    c = preset(val);
  } else if (key == "num_stages") {
    const int n = parse_int(val, key);
    if (n < 1 || n > 4) throw ConfigError("num_stages must be in 1..4");
    while (static_cast<int>(c.stages.size()) > n) c.stages.pop_back();
    while (static_cast<int>(c.stages.size()) < n) {
      if (c.stages.empty()) {
        c.stages.push_back(bottleneck_stage());
        continue;
      }
      StageConfig next = c.stages.size() == 1 ? transformer_stage(1, 18, {1, 2}) : c.stages.back();
      if (c.stages.size() > 1) {
        next.heads.push_back(next.heads.back() * 2);
        next.mlp_ratio.push_back(next.mlp_ratio.back());
        next.window.push_back(next.window.back());
      }
      c.stages.push_back(next);
    }
  } else if (key == "head") {
    c.head = parse_head_kind(val);
  } else if (key == "name") {
    c.name = val;
  } else if (key == "num_classes") {
    c.num_classes = parse_int(val, key);
  } else if (key == "num_keypoints") {
    c.num_keypoints = parse_int(val, key);
  } else if (key == "enable_ffn_dwconv") {
    c.enable_ffn_dwconv = parse_bool(val, key);
  } else if (key == "seed") {
    std::uint64_t seed = 0;
    auto [ptr, ec] = std::from_chars(val.data(), val.data() + val.size(), seed);
    if (ec != std::errc() || ptr != val.data() + val.size()) throw ConfigError("key 'seed': expected an unsigned integer");
    c.seed = seed;
  } else if (key == "stem_channels") {
    c.stem_channels = parse_int(val, key);
  } else if (key == "cls_head_planes") {
    c.cls_head_planes = parse_int(val, key);
  } else if (key == "cls_head_features") {
    c.cls_head_features = parse_int(val, key);
  } else if (key == "seg_head_channels") {
    c.seg_head_channels = parse_int(val, key);
  } else if (key.rfind("stages[", 0) == 0) {
    const auto close = key.find(']');
    if (close == std::string::npos || close + 1 >= key.size() || key[close + 1] != '.') {
      throw ConfigError("malformed key '" + key + "'");
    }
    const int idx = parse_int(std::string_view(key).substr(7, close - 7), key);
    if (idx < 0 || idx >= static_cast<int>(c.stages.size())) {
      throw ConfigError("key '" + key + "': stage index out of range (set num_stages first)");
    }
    StageConfig& s = c.stages[static_cast<std::size_t>(idx)];
    const std::string field = key.substr(close + 2);
    if (field == "modules") {
      s.modules = parse_int(val, key);
    } else if (field == "blocks") {
      s.blocks = parse_int(val, key);
    } else if (field == "channels") {
      s.channels = parse_int(val, key);
    } else if (field == "heads") {
      s.heads = parse_int_list(val, key);
    } else if (field == "mlp_ratio") {
      s.mlp_ratio = parse_int_list(val, key);
    } else if (field == "window") {
      s.window = parse_int_list(val, key);
    } else {
      throw ConfigError("unknown stage field '" + field + "'");
    }
  } else {
    throw ConfigError("unknown key '" + key + "'");
  }
}

ModelConfig parse_config(std::istream& is) {
  ModelConfig c = preset("hrformer-t");
  c.name = "custom";
  std::string line;
  int number = 0;
  while (std::getline(is, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    try {
      if (eq == std::string::npos) throw ConfigError("expected 'key = value'");
      const std::string key = trim(std::string_view(body).substr(0, eq));
      if (key.empty()) throw ConfigError("missing key");
      apply_setting(c, key, std::string_view(body).substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(number) + ": " + e.what());
    }
  }
  validate(c);
  return c;
}

ModelConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  return parse_config(is);
}

std::string format_config(const ModelConfig& c) {
  std::ostringstream os;
  os << "name = " << c.name << '\n';
  os << "num_stages = " << c.stages.size() << '\n';
  for (std::size_t i = 0; i < c.stages.size(); ++i) {
    const StageConfig& s = c.stages[i];
    const std::string p = "stages[" + std::to_string(i) + "].";
    os << p << "modules = " << s.modules << '\n';
    os << p << "blocks = " << s.blocks << '\n';
    os << p << "channels = " << s.channels << '\n';
    if (i > 0) {
      os << p << "heads = " << join(s.heads) << '\n';
      os << p << "mlp_ratio = " << join(s.mlp_ratio) << '\n';
      os << p << "window = " << join(s.window) << '\n';
    }
  }
  os << "head = " << to_string(c.head) << '\n';
  os << "num_classes = " << c.num_classes << '\n';
  os << "num_keypoints = " << c.num_keypoints << '\n';
  os << "enable_ffn_dwconv = " << (c.enable_ffn_dwconv ? "true" : "false") << '\n';
  os << "seed = " << c.seed << '\n';
  os << "stem_channels = " << c.stem_channels << '\n';
  os << "cls_head_planes = " << c.cls_head_planes << '\n';
  os << "cls_head_features = " << c.cls_head_features << '\n';
  os << "seg_head_channels = " << c.seg_head_channels << '\n';
  return os.str();
}

}  // namespace hrformer
