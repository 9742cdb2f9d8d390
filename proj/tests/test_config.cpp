#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hrformer/config.hpp"
#include "hrformer/error.hpp"

using namespace hrformer;

namespace {

ModelConfig parse(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("config text selects a preset and overrides fields") {
  const ModelConfig c = parse(
      "# pose model\n"
      "preset = hrformer-b\n"
      "\n"
      "head = pose   # trailing comment\n"
      "num_keypoints = 14\n"
      "stages[3].window = [9, 9, 9, 9]\n"
      "enable_ffn_dwconv = false\n"
      "seed = 42\n");
  CHECK(c.name == "hrformer-b");
  CHECK(c.head == HeadKind::pose);
  CHECK(c.num_keypoints == 14);
  CHECK(c.stages[3].window == std::vector<int>{9, 9, 9, 9});
  CHECK(c.stages[2].window == std::vector<int>{7, 7, 7});
  CHECK_FALSE(c.enable_ffn_dwconv);
  CHECK(c.seed == 42);
  CHECK(c.base_channels() == 78);
}

TEST_CASE("num_stages trims and extends the stage list") {
  const ModelConfig two = parse("num_stages = 2\n");
  CHECK(two.stream_count() == 2);
  CHECK(two.stream_channels() == std::vector<int>{18, 36});
  const ModelConfig grown = parse("num_stages = 2\nnum_stages = 3\n");
  CHECK(grown.stages[2].heads == std::vector<int>{1, 2, 4});
  CHECK(parse("num_stages = 1\n").stream_channels().size() == 1);
}

TEST_CASE("errors carry the line number") {
  CHECK(error_of("head = pose\nwindow = 7\n").rfind("line 2: unknown key", 0) == 0);
  CHECK(error_of("\n\nnum_classes = ten\n").rfind("line 3:", 0) == 0);
  CHECK(error_of("stages[1].heads = [1, 2\n").find("unterminated") != std::string::npos);
  CHECK(error_of("stages[7].blocks = 2\n").find("out of range") != std::string::npos);
  CHECK(error_of("stages[1].depth = 2\n").find("unknown stage field") != std::string::npos);
  CHECK(error_of("just words\n").rfind("line 1: expected", 0) == 0);
  CHECK(error_of("enable_ffn_dwconv = maybe\n").find("true/false") != std::string::npos);
  CHECK(error_of("preset = hrformer-q\n").find("unknown preset") != std::string::npos);
  CHECK(error_of("head = detection\n").find("unknown head kind") != std::string::npos);
  CHECK(error_of("seed = -1\n").find("seed") != std::string::npos);
}

TEST_CASE("whole-config validation") {
  // heads must divide the stream width
  CHECK_FALSE(error_of("stages[1].heads = [5, 2]\n").empty());
  CHECK_FALSE(error_of("stages[2].window = [7, 7]\n").empty());
  CHECK_FALSE(error_of("stages[2].channels = 20\n").empty());
  CHECK_FALSE(error_of("num_classes = 0\n").empty());
  CHECK_FALSE(error_of("stages[1].window = [0, 7]\n").empty());
  CHECK(error_of("stages[1].window = [3, 5]\n").empty());
}

TEST_CASE("formatted config parses back to the same value") {
  for (const auto& name : preset_names()) {
    ModelConfig c = preset(name);
    c.seed = 9;
    c.head = HeadKind::segmentation;
    const ModelConfig back = parse(format_config(c));
    CHECK(back == c);
  }
}

TEST_CASE("single assignments") {
  ModelConfig c = preset("micro");
  apply_setting(c, "stages[1].mlp_ratio", "[3, 1]");
  CHECK(c.stages[1].mlp_ratio == std::vector<int>{3, 1});
  apply_setting(c, "cls_head_features", " 32 ");
  CHECK(c.cls_head_features == 32);
  CHECK_THROWS_AS(apply_setting(c, "stages[1]heads", "[1]"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "stages[1].heads", "[1,,2]"), ConfigError);
  CHECK(parse_head_kind("segmentation") == HeadKind::segmentation);
  CHECK(to_string(HeadKind::pose) == "pose");
}

TEST_CASE("config files") {
  const auto path = std::filesystem::temp_directory_path() / "hrformer_test.cfg";
  {
    std::ofstream os(path);
    os << "preset = micro\nhead = pose\n";
  }
  CHECK(load_config(path).head == HeadKind::pose);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_config(path), ConfigError);
}
