#include <doctest.h>

#include <cstring>
#include <set>

#include "hrformer/error.hpp"
#include "hrformer/model.hpp"
#include "support.hpp"

using namespace hrformer;
using namespace hrformer::testing;

namespace {

Index halve(Index v) { return (v + 1) / 2; }

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.raw(), b.raw(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("preset widths and stream layout") {
  CHECK(preset("hrformer-t").stream_channels() == std::vector<int>{18, 36, 72, 144});
  CHECK(preset("hrformer-s").stream_channels() == std::vector<int>{32, 64, 128, 256});
  CHECK(preset("hrformer-b").stream_channels() == std::vector<int>{78, 156, 312, 624});
  const ModelConfig t = preset("hrformer-t");
  REQUIRE(t.stages.size() == 4);
  CHECK(t.stages[1].modules == 1);
  CHECK(t.stages[2].modules == 3);
  CHECK(t.stages[3].modules == 2);
  CHECK(t.stages[3].heads == std::vector<int>{1, 2, 4, 8});
  CHECK(preset("hrformer-b").stages[3].heads == std::vector<int>{2, 4, 8, 16});
  CHECK(preset("hrformer-s").stages[2].modules == 4);
  for (const auto& name : preset_names()) CHECK_NOTHROW(validate(preset(name)));
  CHECK_THROWS_AS(preset("hrformer-xl"), ConfigError);
}

TEST_CASE("stem halves twice with ceiling") {
  const ModelConfig c = preset("hrformer-t");
  CHECK(stem_shape(c, 224, 224) == MapShape{64, 56, 56});
  CHECK(stem_shape(c, 256, 192) == MapShape{64, 64, 48});
  CHECK(stem_shape(c, 225, 7) == MapShape{64, 57, 2});
  CHECK_THROWS_AS(stem_shape(c, 3, 64), ConfigError);
}

TEST_CASE("stream shapes follow the halving law") {
  for (const char* name : {"hrformer-t", "hrformer-s", "hrformer-b"}) {
    const ModelConfig c = preset(name);
    for (auto [h, w] : {std::pair<Index, Index>{224, 224}, {256, 192}, {384, 288}, {97, 61}}) {
      const auto shapes = stream_shapes(c, h, w);
      REQUIRE(shapes.size() == 4);
      Index sh = halve(halve(h)), sw = halve(halve(w));
      for (std::size_t s = 0; s < 4; ++s) {
        CHECK(shapes[s] == MapShape{static_cast<Index>(c.stream_channels()[s]), sh, sw});
        sh = halve(sh);
        sw = halve(sw);
      }
    }
  }
  const auto t = stream_shapes(preset("hrformer-t"), 224, 224);
  CHECK(t[3] == MapShape{144, 7, 7});
}

TEST_CASE("forward stream shapes agree with the dry run") {
  const ModelConfig c = preset("micro");
  const HRFormer model(c);
  Rng rng(1);
  for (auto [h, w] : {std::pair<Index, Index>{16, 16}, {13, 22}}) {
    const StreamSet streams = model.forward_streams(normal_tensor({2, 3, h, w}, rng));
    const auto expected = stream_shapes(c, h, w);
    REQUIRE(streams.size() == expected.size());
    for (std::size_t s = 0; s < streams.size(); ++s)
      CHECK(streams[s].shape() == Shape{2, expected[s].channels, expected[s].height, expected[s].width});
  }
}

TEST_CASE("stage observer sees every stage in order") {
  ModelConfig c = preset("micro");
  c.stages.push_back(StageConfig{2, 1, 4, {1, 1, 1}, {1, 1, 1}, {2, 2, 2}});
  const HRFormer model(c);
  std::vector<std::string> names;
  std::vector<std::size_t> counts;
  Rng rng(2);
  model.forward_streams(normal_tensor({1, 3, 32, 32}, rng), {}, [&](std::string_view stage, const StreamSet& s) {
    names.emplace_back(stage);
    counts.push_back(s.size());
  });
  REQUIRE(names.size() >= 3);
  CHECK(counts.back() == 3);
  for (std::size_t i = 1; i < counts.size(); ++i) CHECK(counts[i] >= counts[i - 1]);
}

TEST_CASE("module counts of the tiny preset") {
  Rng rng(3);
  const BackboneParams p = BackboneParams::init(preset("hrformer-t"), rng);
  REQUIRE(p.stages.size() == 3);
  Index modules = 0;
  for (const auto& s : p.stages) modules += static_cast<Index>(s.modules.size());
  CHECK(modules == 6);
  CHECK(p.stages[0].modules[0].blocks.size() == 2);
  CHECK(p.stages[2].modules[0].blocks.size() == 4);
  for (const auto& stream : p.stages[2].modules[1].blocks) CHECK(stream.size() == 2);
}

TEST_CASE("fusion preserves stream shapes and sums all branches") {
  Rng rng(4);
  const std::vector<Index> channels{4, 8, 16};
  const FuseParams fuse = FuseParams::init(channels, rng);
  REQUIRE(fuse.branches.size() == 3);
  CHECK(fuse.branches[0][0].kind == FuseBranch::Kind::identity);
  CHECK(fuse.branches[0][2].kind == FuseBranch::Kind::upsample);
  CHECK(fuse.branches[2][0].kind == FuseBranch::Kind::downsample);
  CHECK(fuse.branches[2][0].steps.size() == 2);
  CHECK(fuse.branches[2][1].steps.size() == 1);
  const StreamSet in{normal_tensor({2, 4, 9, 7}, rng), normal_tensor({2, 8, 5, 4}, rng), normal_tensor({2, 16, 3, 2}, rng)};
  const StreamSet out = fuse_streams(in, fuse);
  REQUIRE(out.size() == 3);
  for (std::size_t s = 0; s < 3; ++s) {
    CHECK(out[s].shape() == in[s].shape());
    for (double v : out[s].data()) CHECK(v >= 0.0);
  }
  const StreamSet single{in[0]};
  CHECK(bit_equal(fuse_streams(single, FuseParams::init({4}, rng))[0], in[0]));
}

TEST_CASE("add stream halves the lowest map and doubles its width") {
  Rng rng(5);
  const ConvBn conv = ConvBn::init(8, 16, 3, 2, rng);
  const StreamSet in{normal_tensor({1, 4, 10, 10}, rng), normal_tensor({1, 8, 5, 5}, rng)};
  const StreamSet out = add_stream(in, conv);
  REQUIRE(out.size() == 3);
  CHECK(out[2].shape() == Shape{1, 16, 3, 3});
  CHECK(out[0].same_storage(in[0]));
}

TEST_CASE("same seed gives the same model and output") {
  const ModelConfig c = preset("micro");
  const HRFormer a(c), b(c);
  Rng rng(6);
  const Tensor x = normal_tensor({1, 3, 16, 16}, rng);
  CHECK(bit_equal(a.forward(x), b.forward(x)));
  const auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(bit_equal(pa[i].tensor, pb[i].tensor));
  }
  ModelConfig other = c;
  other.seed = 1;
  CHECK_FALSE(bit_equal(HRFormer(other).forward(x), a.forward(x)));
}

TEST_CASE("parameter names are unique and grouped") {
  const HRFormer model(preset("micro"));
  std::set<std::string> names;
  for (const auto& p : model.parameters()) {
    CHECK(names.insert(p.name).second);
    CHECK_FALSE(p.group.empty());
  }
}

TEST_CASE("dropping the depth-wise stage drops its parameters") {
  ModelConfig c = preset("micro");
  const Index with = HRFormer(c).parameter_count();
  c.enable_ffn_dwconv = false;
  const Index without = HRFormer(c).parameter_count();
  // micro: one block per stream, hidden widths 8 and 16, 3x3 kernels plus bias
  CHECK(with - without == (8 + 16) * 10);
}

TEST_CASE("backbone rejects bad inputs") {
  const HRFormer model(preset("micro"));
  CHECK_THROWS(model.forward(Tensor({1, 4, 16, 16})));
  CHECK_THROWS(model.forward(Tensor({3, 16, 16})));
  CHECK_THROWS_AS(model.forward(Tensor({1, 3, 2, 16})), ConfigError);
  ModelConfig bad = preset("micro");
  bad.stages[1].heads = {1, 3};
  CHECK_THROWS_AS(HRFormer{bad}, ConfigError);
}
