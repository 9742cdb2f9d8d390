#include <doctest.h>

#include <cmath>
#include <cstring>
#include <quadmath.h>

#include "hrformer/error.hpp"
#include "support.hpp"

using namespace hrformer;
using hrformer::testing::finite_difference_error;
using hrformer::testing::max_abs_diff;

namespace {

Tensor random(Shape s, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  return normal_tensor(std::move(s), rng, scale);
}

// Direct seven-loop convolution used as the reference.
Tensor conv_reference(const Tensor& x, const Tensor& w, const Conv2dOptions& o) {
  const Index n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index cout = w.dim(0), cpg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const Index opg = cout / o.groups;
  const Index oh = (h + 2 * o.padding - kh) / o.stride + 1, ow = (wd + 2 * o.padding - kw) / o.stride + 1;
  Tensor y({n, cout, oh, ow});
  for (Index b = 0; b < n; ++b)
    for (Index co = 0; co < cout; ++co)
      for (Index i = 0; i < oh; ++i)
        for (Index j = 0; j < ow; ++j) {
          double acc = 0.0;
          const Index g = co / opg;
          for (Index ci = 0; ci < cpg; ++ci)
            for (Index a = 0; a < kh; ++a)
              for (Index c = 0; c < kw; ++c) {
                const Index yy = i * o.stride - o.padding + a, xx = j * o.stride - o.padding + c;
                if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                acc += x.at({b, g * cpg + ci, yy, xx}) * w.at({co, ci, a, c});
              }
          y.at({b, co, i, j}) = acc;
        }
  (void)cin;
  return y;
}

Tensor channel_slice(const Tensor& x, Index c) {
  const Index n = x.dim(0), cs = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({n, 1, x.dim(2), x.dim(3)});
  for (Index b = 0; b < n; ++b)
    std::memcpy(out.raw() + b * hw, x.raw() + (b * cs + c) * hw, static_cast<std::size_t>(hw) * sizeof(double));
  return out;
}

}  // namespace

TEST_CASE("matmul examples") {
  const Tensor a({2, 2}, std::vector<double>{1, 2, 3, 4});
  const Tensor ones({2, 1}, std::vector<double>{1, 1});
  const Tensor y = matmul(a, ones);
  CHECK(y.shape() == Shape{2, 1});
  CHECK(y[0] == 3.0);
  CHECK(y[1] == 7.0);

  const Tensor eye({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor m = random({3, 4}, 1);
  CHECK(max_abs_diff(matmul(eye, m), m) == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    matmul(Tensor({2, 3}), Tensor({4, 5}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2, 3)") != std::string::npos);
    CHECK(msg.find("(4, 5)") != std::string::npos);
  }
}

TEST_CASE("matmul gradient") {
  const double err = finite_difference_error([](const auto& in) { return matmul(in[0], in[1]); },
                                             {random({5, 7}, 2), random({7, 3}, 3)});
  CHECK(err < 1e-7);
}

TEST_CASE("linear gradient") {
  const double err = finite_difference_error([](const auto& in) { return linear(in[0], in[1], in[2]); },
                                             {random({4, 6}, 4), random({6, 3}, 5), random({3}, 6)});
  CHECK(err < 1e-7);
}

TEST_CASE("softmax examples") {
  const Tensor half = softmax_lastdim(Tensor({2}, std::vector<double>{0, 0}));
  CHECK(half[0] == 0.5);
  CHECK(half[1] == 0.5);
  CHECK(softmax_lastdim(Tensor({3, 1}, std::vector<double>{-4, 0, 9}))[2] == 1.0);

  const Tensor big = softmax_lastdim(Tensor({2}, std::vector<double>{1000, 0}));
  CHECK(big[0] == 1.0);
  CHECK(std::isfinite(big[1]));
  // quad-precision reference: exp(-1000) / (1 + exp(-1000))
  const __float128 ref = expq(-1000.0Q) / (1.0Q + expq(-1000.0Q));
  CHECK(std::abs(big[1] - static_cast<double>(ref)) <= 1e-300);
}

TEST_CASE("softmax matches a quad-precision oracle") {
  Rng rng(8);
  const Tensor x = normal_tensor({6, 9}, rng, 30.0);
  const Tensor y = softmax_lastdim(x);
  for (Index r = 0; r < 6; ++r) {
    __float128 z = 0;
    for (Index c = 0; c < 9; ++c) z += expq(static_cast<__float128>(x.at({r, c})));
    for (Index c = 0; c < 9; ++c) {
      const double ref = static_cast<double>(expq(static_cast<__float128>(x.at({r, c}))) / z);
      CHECK(std::abs(y.at({r, c}) - ref) <= 1e-15 + 1e-13 * ref);
    }
  }
}

TEST_CASE("softmax rows sum to one") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor y = softmax_lastdim(random({4, 3, 17}, seed, 50.0));
    for (Index r = 0; r < 12; ++r) {
      double s = 0.0;
      for (Index c = 0; c < 17; ++c) s += y[r * 17 + c];
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("softmax gradient") {
  CHECK(finite_difference_error([](const auto& in) { return softmax_lastdim(in[0]); }, {random({3, 5}, 9)}) < 1e-7);
}

TEST_CASE("conv output extent") {
  CHECK(conv_output_extent(224, 3, 2, 1) == 112);
  CHECK(conv_output_extent(7, 3, 2, 1) == 4);
  CHECK(conv_output_extent(5, 3, 1, 0) == 3);
}

TEST_CASE("pointwise identity kernel per channel is the identity") {
  const Tensor x = random({2, 3, 4, 5}, 10);
  const Tensor w({3, 1, 1, 1}, 1.0);
  CHECK(max_abs_diff(conv2d(x, w, {.stride = 1, .padding = 0, .groups = 3}), x) == 0.0);
}

TEST_CASE("3x3 all-ones depth-wise kernel sums the window") {
  const Tensor x({1, 2, 5, 5}, 1.0);
  const Tensor w({2, 1, 3, 3}, 1.0);
  const Tensor y = conv2d(x, w, {.stride = 1, .padding = 1, .groups = 2});
  CHECK(y.shape() == Shape{1, 2, 5, 5});
  for (Index c = 0; c < 2; ++c)
    for (Index i = 1; i < 4; ++i)
      for (Index j = 1; j < 4; ++j) CHECK(y.at({0, c, i, j}) == 9.0);
  CHECK(y.at({0, 0, 0, 0}) == 4.0);
  CHECK(y.at({0, 1, 0, 2}) == 6.0);
}

TEST_CASE("conv2d matches the direct loop") {
  struct Case {
    Shape x, w;
    Conv2dOptions o;
  };
  const Case cases[] = {
      {{2, 4, 7, 6}, {6, 4, 3, 3}, {.stride = 1, .padding = 1, .groups = 1}},
      {{1, 4, 9, 8}, {6, 2, 3, 3}, {.stride = 2, .padding = 1, .groups = 2}},
      {{2, 5, 6, 6}, {3, 5, 1, 1}, {.stride = 1, .padding = 0, .groups = 1}},
      {{1, 3, 8, 7}, {3, 1, 3, 3}, {.stride = 2, .padding = 1, .groups = 3}},
      {{1, 2, 5, 5}, {4, 2, 5, 3}, {.stride = 1, .padding = 0, .groups = 1}},
  };
  std::uint64_t seed = 20;
  for (const Case& c : cases) {
    const Tensor x = random(c.x, seed++), w = random(c.w, seed++);
    CHECK(max_abs_diff(conv2d(x, w, c.o), conv_reference(x, w, c.o)) < 1e-12);
  }
}

TEST_CASE("depth-wise conv equals per-channel conv bit for bit") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Index c = 3 + static_cast<Index>(seed);
    const Tensor x = random({2, c, 6 + static_cast<Index>(seed), 5}, 100 + seed);
    const Tensor w = random({c, 1, 3, 3}, 200 + seed);
    for (Index stride : {1, 2}) {
      const Tensor y = conv2d(x, w, {.stride = stride, .padding = 1, .groups = c});
      for (Index ch = 0; ch < c; ++ch) {
        Tensor wc({1, 1, 3, 3});
        std::memcpy(wc.raw(), w.raw() + ch * 9, 9 * sizeof(double));
        const Tensor yc = conv2d(channel_slice(x, ch), wc, {.stride = stride, .padding = 1, .groups = 1});
        const Tensor got = channel_slice(y, ch);
        REQUIRE(got.size() == yc.size());
        CHECK(std::memcmp(got.raw(), yc.raw(), static_cast<std::size_t>(got.size()) * sizeof(double)) == 0);
      }
    }
  }
}

TEST_CASE("conv2d gradients") {
  CHECK(finite_difference_error([](const auto& in) { return conv2d(in[0], in[1], {.stride = 1, .padding = 1}); },
                                {random({1, 2, 5, 5}, 30), random({3, 2, 3, 3}, 31)}) < 1e-6);
  CHECK(finite_difference_error(
            [](const auto& in) { return conv2d(in[0], in[1], in[2], {.stride = 2, .padding = 1, .groups = 4}); },
            {random({2, 4, 5, 6}, 32), random({4, 1, 3, 3}, 33), random({4}, 34)}) < 1e-6);
  CHECK(finite_difference_error([](const auto& in) { return conv2d(in[0], in[1], in[2]); },
                                {random({2, 3, 3, 3}, 35), random({5, 3, 1, 1}, 36), random({5}, 37)}) < 1e-6);
}

TEST_CASE("conv2d channel and group mismatch") {
  CHECK_THROWS_AS(conv2d(Tensor({1, 3, 4, 4}), Tensor({2, 2, 3, 3})), DimensionError);
  CHECK_THROWS_AS(conv2d(Tensor({1, 3, 4, 4}), Tensor({2, 1, 3, 3}), {.stride = 1, .padding = 0, .groups = 2}),
                  DimensionError);
}

TEST_CASE("layer norm examples") {
  const Tensor gamma({3}, 1.0), beta({3}, 0.0);
  const Tensor constant({2, 3, 2, 2}, 4.0);
  CHECK(max_abs_diff(layer_norm(constant, gamma, beta), Tensor({2, 3, 2, 2}, 0.0)) == 0.0);

  const Tensor b({3}, std::vector<double>{1, -2, 0.5});
  const Tensor y = layer_norm(random({2, 3, 2, 2}, 40), Tensor({3}, 0.0), b);
  for (Index n = 0; n < 2; ++n)
    for (Index c = 0; c < 3; ++c)
      for (Index p = 0; p < 4; ++p) CHECK(y[(n * 3 + c) * 4 + p] == b[c]);
}

TEST_CASE("layer norm statistics per position") {
  const Tensor x = random({2, 8, 3, 3}, 41, 5.0);
  const Tensor y = layer_norm(x, Tensor({8}, 1.0), Tensor({8}, 0.0));
  for (Index n = 0; n < 2; ++n)
    for (Index p = 0; p < 9; ++p) {
      double mean = 0.0, var = 0.0, xm = 0.0, xv = 0.0;
      for (Index c = 0; c < 8; ++c) {
        mean += y[(n * 8 + c) * 9 + p];
        xm += x[(n * 8 + c) * 9 + p];
      }
      mean /= 8;
      xm /= 8;
      for (Index c = 0; c < 8; ++c) {
        var += std::pow(y[(n * 8 + c) * 9 + p] - mean, 2);
        xv += std::pow(x[(n * 8 + c) * 9 + p] - xm, 2);
      }
      var /= 8;
      xv /= 8;
      CHECK(std::abs(mean) < 1e-9);
      // the epsilon shrinks the variance by xv / (xv + eps)
      CHECK(std::abs(var - xv / (xv + kNormEpsilon)) < 1e-6);
      CHECK(std::abs(var - 1.0) < 1e-5);
    }
}

TEST_CASE("layer norm gradient") {
  CHECK(finite_difference_error([](const auto& in) { return layer_norm(in[0], in[1], in[2]); },
                                {random({2, 5, 2, 3}, 42), random({5}, 43), random({5}, 44)}) < 1e-6);
  CHECK(finite_difference_error([](const auto& in) { return layer_norm(in[0], in[1], in[2]); },
                                {random({4, 6}, 45), random({6}, 46), random({6}, 47)}) < 1e-6);
}

TEST_CASE("batch norm inference uses the stored statistics") {
  const Tensor x = random({2, 3, 2, 2}, 50);
  const Tensor gamma({3}, std::vector<double>{1.0, 2.0, -1.0}), beta({3}, std::vector<double>{0.0, 1.0, 0.5});
  const Tensor mean({3}, std::vector<double>{0.1, -0.2, 0.3}), var({3}, std::vector<double>{1.0, 4.0, 0.25});
  const Tensor y = batch_norm_inference(x, gamma, beta, mean, var);
  for (Index n = 0; n < 2; ++n)
    for (Index c = 0; c < 3; ++c)
      for (Index p = 0; p < 4; ++p) {
        const Index i = (n * 3 + c) * 4 + p;
        const double ref = (x[i] - mean[c]) / std::sqrt(var[c] + kNormEpsilon) * gamma[c] + beta[c];
        CHECK(y[i] == doctest::Approx(ref).epsilon(1e-14));
      }
  CHECK(finite_difference_error(
            [&](const auto& in) { return batch_norm_inference(in[0], in[1], in[2], mean, var); },
            {x, gamma, beta}) < 1e-7);
}

TEST_CASE("batch norm running statistics update") {
  const Tensor x({2, 1, 1, 2}, std::vector<double>{1, 2, 3, 6});
  Tensor mean({1}, 0.0), var({1}, 1.0);
  update_batch_norm_stats(x, mean, var, 0.1);
  // batch mean 3, unbiased variance (4 + 1 + 0 + 9) / 3
  CHECK(mean[0] == doctest::Approx(0.3));
  CHECK(var[0] == doctest::Approx(0.9 + 0.1 * 14.0 / 3.0));
}

TEST_CASE("activation values and gradients") {
  const Tensor x({4}, std::vector<double>{-2.0, -0.5, 0.5, 1.0});
  const Tensor r = relu(x);
  CHECK(r[0] == 0.0);
  CHECK(r[2] == 0.5);
  const Tensor g = gelu(x);
  CHECK(g[3] == doctest::Approx(0.8413447460685429).epsilon(1e-14));
  CHECK(g[0] == doctest::Approx(-0.04550026389635842).epsilon(1e-13));
  CHECK(finite_difference_error([](const auto& in) { return gelu(in[0]); }, {random({3, 7}, 51)}) < 1e-6);
  // keep samples away from the kink
  Tensor away = random({20}, 52);
  for (double& v : away.data()) v += v >= 0 ? 0.1 : -0.1;
  CHECK(finite_difference_error([](const auto& in) { return relu(in[0]); }, {away}) < 1e-9);
}

TEST_CASE("elementwise arithmetic gradients") {
  CHECK(finite_difference_error([](const auto& in) { return add(in[0], in[1]); },
                                {random({2, 3}, 53), random({2, 3}, 54)}) < 1e-9);
  CHECK(finite_difference_error([](const auto& in) { return mul(in[0], in[1]); },
                                {random({2, 3}, 55), random({2, 3}, 56)}) < 1e-9);
  CHECK(finite_difference_error([](const auto& in) { return scale(in[0], -2.5); }, {random({5}, 57)}) < 1e-9);
  CHECK_THROWS_AS(add(Tensor({2, 3}), Tensor({3, 2})), DimensionError);
}

TEST_CASE("pooling and resampling") {
  const Tensor c({2, 3, 4, 5}, 2.5);
  const Tensor p = global_avg_pool(c);
  CHECK(p.shape() == Shape{2, 3});
  for (double v : p.data()) CHECK(v == 2.5);

  const Tensor one({1, 1, 1, 1}, 7.0);
  const Tensor up = upsample_nearest(one, 2);
  CHECK(up.shape() == Shape{1, 1, 2, 2});
  for (double v : up.data()) CHECK(v == 7.0);

  const Tensor x = random({1, 2, 3, 2}, 60);
  const Tensor u4 = upsample_nearest(x, 4);
  CHECK(u4.at({0, 1, 11, 7}) == x.at({0, 1, 2, 1}));
  CHECK(max_abs_diff(resize_nearest(x, 12, 8), u4) == 0.0);
  const Tensor r = resize_nearest(x, 7, 3);
  CHECK(r.shape() == Shape{1, 2, 7, 3});
  CHECK(r.at({0, 0, 6, 2}) == x.at({0, 0, 2, 1}));
  CHECK(r.at({0, 0, 2, 1}) == x.at({0, 0, 0, 0}));
}

TEST_CASE("pooling and resampling gradients") {
  CHECK(finite_difference_error([](const auto& in) { return global_avg_pool(in[0]); }, {random({2, 3, 4, 3}, 61)}) <
        1e-9);
  CHECK(finite_difference_error([](const auto& in) { return upsample_nearest(in[0], 2); },
                                {random({1, 2, 3, 3}, 62)}) < 1e-9);
  CHECK(finite_difference_error([](const auto& in) { return resize_nearest(in[0], 5, 7); },
                                {random({1, 2, 3, 2}, 63)}) < 1e-9);
}

TEST_CASE("reshape and permute") {
  const Tensor x = random({2, 3, 4}, 70);
  const Tensor r = reshape(x, {6, 4});
  CHECK(r.shape() == Shape{6, 4});
  CHECK(max_abs_diff(reshape(r, {2, 3, 4}), x) == 0.0);
  CHECK_THROWS_AS(reshape(x, {5, 5}), DimensionError);

  const Tensor p = permute(x, {2, 0, 1});
  CHECK(p.shape() == Shape{4, 2, 3});
  CHECK(p.at({3, 1, 2}) == x.at({1, 2, 3}));
  const Tensor back = permute(p, {1, 2, 0});
  CHECK(std::memcmp(back.raw(), x.raw(), static_cast<std::size_t>(x.size()) * sizeof(double)) == 0);
  CHECK(finite_difference_error([](const auto& in) { return permute(in[0], {1, 2, 0}); }, {x}) < 1e-9);
  CHECK(finite_difference_error([](const auto& in) { return reshape(in[0], {4, 6}); }, {x}) < 1e-9);
}

TEST_CASE("channel concatenation") {
  const Tensor a = random({2, 1, 2, 2}, 71), b = random({2, 3, 2, 2}, 72);
  const Tensor parts[] = {a, b};
  const Tensor c = concat_channels(parts);
  CHECK(c.shape() == Shape{2, 4, 2, 2});
  CHECK(c.at({1, 0, 1, 1}) == a.at({1, 0, 1, 1}));
  CHECK(c.at({1, 3, 0, 1}) == b.at({1, 2, 0, 1}));
  CHECK(finite_difference_error(
            [](const auto& in) {
              const Tensor p[] = {in[0], in[1]};
              return concat_channels(p);
            },
            {a, b}) < 1e-9);
}

TEST_CASE("losses") {
  const Tensor logits({2, 3}, std::vector<double>{1, 2, 3, 0, 0, 0});
  const int labels[] = {2, 0};
  const double expected = 0.5 * ((std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0) + std::log(3.0));
  CHECK(cross_entropy_loss(logits, labels)[0] == doctest::Approx(expected).epsilon(1e-14));
  CHECK(finite_difference_error([&](const auto& in) { return cross_entropy_loss(in[0], labels); },
                                {random({2, 3}, 80)}) < 1e-7);

  const Tensor pred({2}, std::vector<double>{1, 3}), target({2}, std::vector<double>{0, 1});
  CHECK(mse_loss(pred, target)[0] == doctest::Approx(2.5));
  CHECK(finite_difference_error([](const auto& in) { return mse_loss(in[0], in[1]); },
                                {random({3, 4}, 81), random({3, 4}, 82)}) < 1e-7);
}

TEST_CASE("sgd step moves against the gradient") {
  Tensor w({2}, std::vector<double>{1.0, -1.0});
  w.set_requires_grad(true);
  {
    GradTape tape;
    TapeScope scope(tape);
    tape.backward(sum(mul(w, w)));
  }
  Tensor params[] = {w};
  sgd_step(params, 0.25);
  CHECK(w[0] == 0.5);
  CHECK(w[1] == -0.5);
}

TEST_CASE("finiteness check") {
  Tensor t({3}, 1.0);
  CHECK(all_finite(t));
  t[1] = std::nan("");
  CHECK_FALSE(all_finite(t));
}
