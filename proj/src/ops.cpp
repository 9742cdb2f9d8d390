#include "hrformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "hrformer/error.hpp"

namespace hrformer {

namespace {

void check_finite([[maybe_unused]] const Tensor& t, [[maybe_unused]] const char* op) {
#ifndef NDEBUG
  if (!all_finite(t)) throw NumericalError(std::string(op) + " produced a non-finite value");
#endif
}

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

// Accumulate into t's gradient only when t participates in differentiation.
template <typename F>
void accumulate(Tensor t, F&& f) {
  if (!t.requires_grad()) return;
  f(t.mutable_grad());
}

ConstMatrixMap<double> as_matrix(const Tensor& t, Index rows, Index cols, Index offset = 0) {
  return ConstMatrixMap<double>(t.raw() + offset, rows, cols);
}

}  // namespace

bool all_finite(const Tensor& x) {
  return std::all_of(x.data().begin(), x.data().end(), [](double v) { return std::isfinite(v); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Tensor out({m, n});
  MatrixMap<double>(out.raw(), m, n).noalias() = as_matrix(a, m, k) * as_matrix(b, k, n);
  check_finite(out, "matmul");
  if (should_record({&a, &b})) {
    active_tape()->record("matmul", {a, b}, out, [a, b, out, m, k, n]() {
      const auto g = ConstMatrixMap<double>(out.grad().data(), m, n);
      accumulate(a, [&](std::vector<double>& ga) {
        MatrixMap<double>(ga.data(), m, k).noalias() += g * as_matrix(b, k, n).transpose();
      });
      accumulate(b, [&](std::vector<double>& gb) {
        MatrixMap<double>(gb.data(), k, n).noalias() += as_matrix(a, m, k).transpose() * g;
      });
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const Index n = x.dim(0), in = x.dim(1), outf = weight.dim(1);
  if (weight.dim(0) != in || bias.size() != outf) {
    throw DimensionError("linear: x " + to_string(x.shape()) + ", weight " + to_string(weight.shape()) + ", bias " +
                         to_string(bias.shape()));
  }
  Tensor out({n, outf});
  auto o = MatrixMap<double>(out.raw(), n, outf);
  o.noalias() = as_matrix(x, n, in) * as_matrix(weight, in, outf);
  o.rowwise() += as_matrix(bias, 1, outf).row(0);
  check_finite(out, "linear");
  if (should_record({&x, &weight, &bias})) {
    active_tape()->record("linear", {x, weight, bias}, out, [x, weight, bias, out, n, in, outf]() {
      const auto g = ConstMatrixMap<double>(out.grad().data(), n, outf);
      accumulate(x, [&](std::vector<double>& gx) {
        MatrixMap<double>(gx.data(), n, in).noalias() += g * as_matrix(weight, in, outf).transpose();
      });
      accumulate(weight, [&](std::vector<double>& gw) {
        MatrixMap<double>(gw.data(), in, outf).noalias() += as_matrix(x, n, in).transpose() * g;
      });
      accumulate(bias, [&](std::vector<double>& gb) { MatrixMap<double>(gb.data(), 1, outf) += g.colwise().sum(); });
    });
  }
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() < 1 || x.dim(-1) < 1) throw DimensionError("softmax_lastdim: empty last axis");
  const Index cols = x.dim(-1);
  const Index rows = x.size() / cols;
  Tensor out(x.shape());
  for (Index r = 0; r < rows; ++r) {
    const double* in = x.raw() + r * cols;
    double* o = out.raw() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (Index c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (Index c = 0; c < cols; ++c) o[c] /= total;
  }
  check_finite(out, "softmax_lastdim");
  if (should_record({&x})) {
    active_tape()->record("softmax_lastdim", {x}, out, [x, out, rows, cols]() {
      accumulate(x, [&](std::vector<double>& gx) {
        const auto g = out.grad();
        for (Index r = 0; r < rows; ++r) {
          const double* y = out.raw() + r * cols;
          const double* gy = g.data() + r * cols;
          double dot = 0.0;
          for (Index c = 0; c < cols; ++c) dot += gy[c] * y[c];
          for (Index c = 0; c < cols; ++c) gx[static_cast<std::size_t>(r * cols + c)] += y[c] * (gy[c] - dot);
        }
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution

Index conv_output_extent(Index in, Index kernel, Index stride, Index padding) {
  if (stride < 1) throw ConfigError("conv stride must be >= 1");
  const Index span = in + 2 * padding - kernel;
  if (span < 0) throw DimensionError("conv kernel larger than padded input");
  return span / stride + 1;
}

namespace {

struct ConvGeometry {
  Index batch, in_channels, height, width;
  Index out_channels, kernel_h, kernel_w;
  Index out_h, out_w;
  Index stride, padding, groups;
  Index in_per_group() const { return in_channels / groups; }
  Index out_per_group() const { return out_channels / groups; }
  Index patch() const { return in_per_group() * kernel_h * kernel_w; }
  Index out_positions() const { return out_h * out_w; }
  bool pointwise() const { return kernel_h == 1 && kernel_w == 1 && stride == 1 && padding == 0; }
  bool depthwise() const { return in_per_group() == 1 && out_per_group() == 1; }
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& w, const Conv2dOptions& opt) {
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  ConvGeometry g{};
  g.batch = x.dim(0);
  g.in_channels = x.dim(1);
  g.height = x.dim(2);
  g.width = x.dim(3);
  g.out_channels = w.dim(0);
  g.kernel_h = w.dim(2);
  g.kernel_w = w.dim(3);
  g.stride = opt.stride;
  g.padding = opt.padding;
  g.groups = opt.groups;
  if (opt.groups < 1 || g.in_channels % opt.groups != 0 || g.out_channels % opt.groups != 0) {
    throw DimensionError("conv2d: channels " + std::to_string(g.in_channels) + "->" + std::to_string(g.out_channels) +
                         " not divisible by groups " + std::to_string(opt.groups));
  }
  if (w.dim(1) != g.in_per_group()) {
    throw DimensionError("conv2d: weight " + to_string(w.shape()) + " does not match input " + to_string(x.shape()) +
                         " with groups " + std::to_string(opt.groups));
  }
  if (opt.padding < 0) throw ConfigError("conv2d: negative padding");
  g.out_h = conv_output_extent(g.height, g.kernel_h, g.stride, g.padding);
  g.out_w = conv_output_extent(g.width, g.kernel_w, g.stride, g.padding);
  return g;
}

// Column buffer [patch, out_positions] for one group of one image.
void im2col(const ConvGeometry& g, const double* image, std::vector<double>& cols) {
  cols.assign(static_cast<std::size_t>(g.patch() * g.out_positions()), 0.0);
  Index row = 0;
  for (Index c = 0; c < g.in_per_group(); ++c) {
    const double* plane = image + c * g.height * g.width;
    for (Index ky = 0; ky < g.kernel_h; ++ky) {
      for (Index kx = 0; kx < g.kernel_w; ++kx, ++row) {
        double* dst = cols.data() + row * g.out_positions();
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride - g.padding + kx;
            if (ix >= 0 && ix < g.width) dst[oy * g.out_w + ox] = plane[iy * g.width + ix];
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* image_grad) {
  Index row = 0;
  for (Index c = 0; c < g.in_per_group(); ++c) {
    double* plane = image_grad + c * g.height * g.width;
    for (Index ky = 0; ky < g.kernel_h; ++ky) {
      for (Index kx = 0; kx < g.kernel_w; ++kx, ++row) {
        const double* src = cols + row * g.out_positions();
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride - g.padding + kx;
            if (ix >= 0 && ix < g.width) plane[iy * g.width + ix] += src[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

// Single input channel, single output channel: direct accumulation in kernel order.
void depthwise_forward(const ConvGeometry& g, const double* plane, const double* kernel, double* out) {
  for (Index oy = 0; oy < g.out_h; ++oy) {
    for (Index ox = 0; ox < g.out_w; ++ox) {
      double acc = 0.0;
      for (Index ky = 0; ky < g.kernel_h; ++ky) {
        const Index iy = oy * g.stride - g.padding + ky;
        if (iy < 0 || iy >= g.height) continue;
        for (Index kx = 0; kx < g.kernel_w; ++kx) {
          const Index ix = ox * g.stride - g.padding + kx;
          if (ix >= 0 && ix < g.width) acc += kernel[ky * g.kernel_w + kx] * plane[iy * g.width + ix];
        }
      }
      out[oy * g.out_w + ox] += acc;
    }
  }
}

void depthwise_backward(const ConvGeometry& g, const double* plane, const double* kernel, const double* dout,
                        double* dplane, double* dkernel) {
  for (Index oy = 0; oy < g.out_h; ++oy) {
    for (Index ox = 0; ox < g.out_w; ++ox) {
      const double go = dout[oy * g.out_w + ox];
      if (go == 0.0) continue;
      for (Index ky = 0; ky < g.kernel_h; ++ky) {
        const Index iy = oy * g.stride - g.padding + ky;
        if (iy < 0 || iy >= g.height) continue;
        for (Index kx = 0; kx < g.kernel_w; ++kx) {
          const Index ix = ox * g.stride - g.padding + kx;
          if (ix < 0 || ix >= g.width) continue;
          if (dplane) dplane[iy * g.width + ix] += go * kernel[ky * g.kernel_w + kx];
          if (dkernel) dkernel[ky * g.kernel_w + kx] += go * plane[iy * g.width + ix];
        }
      }
    }
  }
}

Tensor conv2d_impl(const Tensor& x, const Tensor& w, const Tensor* bias, const Conv2dOptions& opt) {
  const ConvGeometry g = conv_geometry(x, w, opt);
  if (bias && bias->size() != g.out_channels) {
    throw DimensionError("conv2d: bias " + to_string(bias->shape()) + " for " + std::to_string(g.out_channels) +
                         " output channels");
  }
  Tensor out({g.batch, g.out_channels, g.out_h, g.out_w});
  const Index in_image = g.in_channels * g.height * g.width;
  const Index out_image = g.out_channels * g.out_positions();
  const Index in_group = g.in_per_group() * g.height * g.width;
  const Index out_group = g.out_per_group() * g.out_positions();
  const Index w_group = g.out_per_group() * g.patch();
  std::vector<double> cols;
  for (Index n = 0; n < g.batch; ++n) {
    for (Index grp = 0; grp < g.groups; ++grp) {
      const double* image = x.raw() + n * in_image + grp * in_group;
      double* dst = out.raw() + n * out_image + grp * out_group;
      if (g.depthwise()) {
        depthwise_forward(g, image, w.raw() + grp * w_group, dst);
        continue;
      }
      auto o = MatrixMap<double>(dst, g.out_per_group(), g.out_positions());
      const auto wm = as_matrix(w, g.out_per_group(), g.patch(), grp * w_group);
      if (g.pointwise()) {
        o.noalias() = wm * ConstMatrixMap<double>(image, g.patch(), g.out_positions());
      } else {
        im2col(g, image, cols);
        o.noalias() = wm * ConstMatrixMap<double>(cols.data(), g.patch(), g.out_positions());
      }
    }
    if (bias) {
      for (Index c = 0; c < g.out_channels; ++c) {
        double* plane = out.raw() + n * out_image + c * g.out_positions();
        const double b = (*bias)[c];
        for (Index p = 0; p < g.out_positions(); ++p) plane[p] += b;
      }
    }
  }
  check_finite(out, "conv2d");

  const bool record = bias ? should_record({&x, &w, bias}) : should_record({&x, &w});
  if (record) {
    std::vector<Tensor> inputs{x, w};
    Tensor b = bias ? *bias : Tensor();
    if (bias) inputs.push_back(b);
    const bool has_bias = bias != nullptr;
    active_tape()->record("conv2d", std::move(inputs), out, [=]() {
      const auto gout = out.grad();
      Tensor xx = x, ww = w, bb = b;
      double* gx = xx.requires_grad() ? xx.mutable_grad().data() : nullptr;
      double* gw = ww.requires_grad() ? ww.mutable_grad().data() : nullptr;
      std::vector<double> cols_buf, dcols;
      for (Index n = 0; n < g.batch; ++n) {
        for (Index grp = 0; grp < g.groups; ++grp) {
          const double* image = x.raw() + n * in_image + grp * in_group;
          const double* dout = gout.data() + n * out_image + grp * out_group;
          double* dimage = gx ? gx + n * in_image + grp * in_group : nullptr;
          if (g.depthwise()) {
            depthwise_backward(g, image, w.raw() + grp * w_group, dout, dimage, gw ? gw + grp * w_group : nullptr);
            continue;
          }
          const auto go = ConstMatrixMap<double>(dout, g.out_per_group(), g.out_positions());
          const auto wm = as_matrix(w, g.out_per_group(), g.patch(), grp * w_group);
          const double* colsp = image;
          if (!g.pointwise()) {
            im2col(g, image, cols_buf);
            colsp = cols_buf.data();
          }
          if (gw) {
            MatrixMap<double>(gw + grp * w_group, g.out_per_group(), g.patch()).noalias() +=
                go * ConstMatrixMap<double>(colsp, g.patch(), g.out_positions()).transpose();
          }
          if (dimage) {
            if (g.pointwise()) {
              MatrixMap<double>(dimage, g.patch(), g.out_positions()).noalias() += wm.transpose() * go;
            } else {
              dcols.resize(static_cast<std::size_t>(g.patch() * g.out_positions()));
              MatrixMap<double>(dcols.data(), g.patch(), g.out_positions()).noalias() = wm.transpose() * go;
              col2im_add(g, dcols.data(), dimage);
            }
          }
        }
      }
      if (has_bias && bb.requires_grad()) {
        auto& gb = bb.mutable_grad();
        for (Index n = 0; n < g.batch; ++n) {
          for (Index c = 0; c < g.out_channels; ++c) {
            const double* plane = gout.data() + n * out_image + c * g.out_positions();
            double s = 0.0;
            for (Index p = 0; p < g.out_positions(); ++p) s += plane[p];
            gb[static_cast<std::size_t>(c)] += s;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Conv2dOptions& options) {
  return conv2d_impl(x, weight, nullptr, options);
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dOptions& options) {
  return conv2d_impl(x, weight, &bias, options);
}

// ---------------------------------------------------------------------------
// Normalization

namespace {
struct AxisOneLayout {
  Index outer, channels, inner;
};

AxisOneLayout axis_one_layout(const Tensor& x, const char* op) {
  if (x.rank() < 2) throw DimensionError(std::string(op) + ": need rank >= 2, got " + to_string(x.shape()));
  AxisOneLayout l{x.dim(0), x.dim(1), 1};
  for (int a = 2; a < x.rank(); ++a) l.inner *= x.dim(a);
  return l;
}
}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const auto l = axis_one_layout(x, "layer_norm");
  if (gamma.size() != l.channels || beta.size() != l.channels) {
    throw DimensionError("layer_norm: affine params " + to_string(gamma.shape()) + " for input " + to_string(x.shape()));
  }
  Tensor out(x.shape());
  // Normalized values and inverse std kept for the backward pass.
  std::vector<double> xhat(static_cast<std::size_t>(x.size()));
  std::vector<double> inv_std(static_cast<std::size_t>(l.outer * l.inner));
  const double inv_c = 1.0 / static_cast<double>(l.channels);
  for (Index o = 0; o < l.outer; ++o) {
    for (Index i = 0; i < l.inner; ++i) {
      const Index base = o * l.channels * l.inner + i;
      double mean = 0.0;
      for (Index c = 0; c < l.channels; ++c) mean += x[base + c * l.inner];
      mean *= inv_c;
      double var = 0.0;
      for (Index c = 0; c < l.channels; ++c) {
        const double d = x[base + c * l.inner] - mean;
        var += d * d;
      }
      var *= inv_c;
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(o * l.inner + i)] = is;
      for (Index c = 0; c < l.channels; ++c) {
        const Index idx = base + c * l.inner;
        const double h = (x[idx] - mean) * is;
        xhat[static_cast<std::size_t>(idx)] = h;
        out[idx] = gamma[c] * h + beta[c];
      }
    }
  }
  check_finite(out, "layer_norm");
  if (should_record({&x, &gamma, &beta})) {
    active_tape()->record(
        "layer_norm", {x, gamma, beta}, out,
        [x, gamma, beta, out, l, inv_c, xhat = std::move(xhat), inv_std = std::move(inv_std)]() {
          const auto g = out.grad();
          Tensor xx = x, gg = gamma, bb = beta;
          double* gx = xx.requires_grad() ? xx.mutable_grad().data() : nullptr;
          double* ggam = gg.requires_grad() ? gg.mutable_grad().data() : nullptr;
          double* gbet = bb.requires_grad() ? bb.mutable_grad().data() : nullptr;
          for (Index o = 0; o < l.outer; ++o) {
            for (Index i = 0; i < l.inner; ++i) {
              const Index base = o * l.channels * l.inner + i;
              double mean_d = 0.0, mean_dh = 0.0;
              for (Index c = 0; c < l.channels; ++c) {
                const auto idx = static_cast<std::size_t>(base + c * l.inner);
                const double d = g[idx] * gamma[c];
                mean_d += d;
                mean_dh += d * xhat[idx];
                if (ggam) ggam[c] += g[idx] * xhat[idx];
                if (gbet) gbet[c] += g[idx];
              }
              if (!gx) continue;
              mean_d *= inv_c;
              mean_dh *= inv_c;
              const double is = inv_std[static_cast<std::size_t>(o * l.inner + i)];
              for (Index c = 0; c < l.channels; ++c) {
                const auto idx = static_cast<std::size_t>(base + c * l.inner);
                gx[idx] += is * (g[idx] * gamma[c] - mean_d - xhat[idx] * mean_dh);
              }
            }
          }
        });
  }
  return out;
}

Tensor batch_norm_inference(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& running_mean,
                            const Tensor& running_var, double eps) {
  const auto l = axis_one_layout(x, "batch_norm_inference");
  for (const Tensor* t : {&gamma, &beta, &running_mean, &running_var}) {
    if (t->size() != l.channels) {
      throw DimensionError("batch_norm_inference: per-channel param " + to_string(t->shape()) + " for input " +
                           to_string(x.shape()));
    }
  }
  std::vector<double> mul(static_cast<std::size_t>(l.channels)), shift(static_cast<std::size_t>(l.channels));
  for (Index c = 0; c < l.channels; ++c) {
    const double is = 1.0 / std::sqrt(running_var[c] + eps);
    mul[static_cast<std::size_t>(c)] = gamma[c] * is;
    shift[static_cast<std::size_t>(c)] = beta[c] - gamma[c] * running_mean[c] * is;
  }
  Tensor out(x.shape());
  for (Index o = 0; o < l.outer; ++o) {
    for (Index c = 0; c < l.channels; ++c) {
      const Index base = (o * l.channels + c) * l.inner;
      const double m = mul[static_cast<std::size_t>(c)], s = shift[static_cast<std::size_t>(c)];
      for (Index i = 0; i < l.inner; ++i) out[base + i] = m * x[base + i] + s;
    }
  }
  check_finite(out, "batch_norm_inference");
  if (should_record({&x, &gamma, &beta})) {
    // Statistics are snapshotted; later running-stat updates do not alter this record.
    std::vector<double> mean(running_mean.data().begin(), running_mean.data().end());
    std::vector<double> inv_std(static_cast<std::size_t>(l.channels));
    for (Index c = 0; c < l.channels; ++c) inv_std[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(running_var[c] + eps);
    active_tape()->record("batch_norm_inference", {x, gamma, beta}, out,
                          [x, gamma, beta, out, l, mean = std::move(mean), inv_std = std::move(inv_std)]() {
                            const auto g = out.grad();
                            Tensor xx = x, gg = gamma, bb = beta;
                            double* gx = xx.requires_grad() ? xx.mutable_grad().data() : nullptr;
                            double* ggam = gg.requires_grad() ? gg.mutable_grad().data() : nullptr;
                            double* gbet = bb.requires_grad() ? bb.mutable_grad().data() : nullptr;
                            for (Index o = 0; o < l.outer; ++o) {
                              for (Index c = 0; c < l.channels; ++c) {
                                const auto cc = static_cast<std::size_t>(c);
                                const Index base = (o * l.channels + c) * l.inner;
                                double sg = 0.0, sgh = 0.0;
                                for (Index i = 0; i < l.inner; ++i) {
                                  const auto idx = static_cast<std::size_t>(base + i);
                                  sg += g[idx];
                                  sgh += g[idx] * (x[base + i] - mean[cc]) * inv_std[cc];
                                  if (gx) gx[idx] += g[idx] * gamma[c] * inv_std[cc];
                                }
                                if (ggam) ggam[c] += sgh;
                                if (gbet) gbet[c] += sg;
                              }
                            }
                          });
  }
  return out;
}

void update_batch_norm_stats(const Tensor& x, Tensor& running_mean, Tensor& running_var, double momentum) {
  const auto l = axis_one_layout(x, "update_batch_norm_stats");
  const Index count = l.outer * l.inner;
  if (count < 2) return;
  for (Index c = 0; c < l.channels; ++c) {
    double mean = 0.0;
    for (Index o = 0; o < l.outer; ++o)
      for (Index i = 0; i < l.inner; ++i) mean += x[(o * l.channels + c) * l.inner + i];
    mean /= static_cast<double>(count);
    double var = 0.0;
    for (Index o = 0; o < l.outer; ++o) {
      for (Index i = 0; i < l.inner; ++i) {
        const double d = x[(o * l.channels + c) * l.inner + i] - mean;
        var += d * d;
      }
    }
    var /= static_cast<double>(count - 1);
    running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean;
    running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var;
  }
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  for (Index i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (should_record({&x})) {
    active_tape()->record("relu", {x}, out, [x, out]() {
      accumulate(x, [&](std::vector<double>& gx) {
        const auto g = out.grad();
        for (Index i = 0; i < x.size(); ++i)
          if (x[i] > 0.0) gx[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)];
      });
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out(x.shape());
  for (Index i = 0; i < x.size(); ++i) out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
  check_finite(out, "gelu");
  if (should_record({&x})) {
    active_tape()->record("gelu", {x}, out, [x, out]() {
      accumulate(x, [&](std::vector<double>& gx) {
        const auto g = out.grad();
        const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
        for (Index i = 0; i < x.size(); ++i) {
          const double v = x[i];
          const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
          const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
          gx[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)] * (cdf + v * pdf);
        }
      });
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (Index i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  check_finite(out, "add");
  if (should_record({&a, &b})) {
    active_tape()->record("add", {a, b}, out, [a, b, out]() {
      const auto g = out.grad();
      for (const Tensor& t : {a, b}) {
        accumulate(t, [&](std::vector<double>& gt) {
          for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += g[i];
        });
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (Index i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  check_finite(out, "mul");
  if (should_record({&a, &b})) {
    active_tape()->record("mul", {a, b}, out, [a, b, out]() {
      const auto g = out.grad();
      accumulate(a, [&](std::vector<double>& ga) {
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * b.data()[i];
      });
      accumulate(b, [&](std::vector<double>& gb) {
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * a.data()[i];
      });
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out(x.shape());
  for (Index i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  if (should_record({&x})) {
    active_tape()->record("scale", {x}, out, [x, out, factor]() {
      accumulate(x, [&](std::vector<double>& gx) {
        const auto g = out.grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * factor;
      });
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = Tensor::scalar(std::accumulate(x.data().begin(), x.data().end(), 0.0));
  if (should_record({&x})) {
    active_tape()->record("sum", {x}, out, [x, out]() {
      accumulate(x, [&](std::vector<double>& gx) {
        const double g = out.grad()[0];
        for (double& v : gx) v += g;
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Resampling and layout

Tensor resize_nearest(const Tensor& x, Index out_height, Index out_width) {
  require_rank(x, 4, "resize_nearest");
  if (out_height < 1 || out_width < 1) throw DimensionError("resize_nearest: empty output size");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out({n, c, out_height, out_width});
  std::vector<Index> src_y(static_cast<std::size_t>(out_height)), src_x(static_cast<std::size_t>(out_width));
  for (Index y = 0; y < out_height; ++y) src_y[static_cast<std::size_t>(y)] = y * h / out_height;
  for (Index xx = 0; xx < out_width; ++xx) src_x[static_cast<std::size_t>(xx)] = xx * w / out_width;
  for (Index p = 0; p < n * c; ++p) {
    const double* in = x.raw() + p * h * w;
    double* o = out.raw() + p * out_height * out_width;
    for (Index y = 0; y < out_height; ++y)
      for (Index xx = 0; xx < out_width; ++xx)
        o[y * out_width + xx] = in[src_y[static_cast<std::size_t>(y)] * w + src_x[static_cast<std::size_t>(xx)]];
  }
  if (should_record({&x})) {
    active_tape()->record("resize_nearest", {x}, out, [=]() {
      accumulate(x, [&](std::vector<double>& gx) {
        const auto g = out.grad();
        for (Index p = 0; p < n * c; ++p) {
          const double* go = g.data() + p * out_height * out_width;
          double* gi = gx.data() + p * h * w;
          for (Index y = 0; y < out_height; ++y)
            for (Index xx = 0; xx < out_width; ++xx)
              gi[src_y[static_cast<std::size_t>(y)] * w + src_x[static_cast<std::size_t>(xx)]] +=
                  go[y * out_width + xx];
        }
      });
    });
  }
  return out;
}

Tensor upsample_nearest(const Tensor& x, Index factor) {
  require_rank(x, 4, "upsample_nearest");
  if (factor < 1) throw ConfigError("upsample_nearest: factor must be >= 1");
  return resize_nearest(x, x.dim(2) * factor, x.dim(3) * factor);
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({n, c});
  for (Index p = 0; p < n * c; ++p) {
    const double* in = x.raw() + p * hw;
    out[p] = std::accumulate(in, in + hw, 0.0) / static_cast<double>(hw);
  }
  if (should_record({&x})) {
    active_tape()->record("global_avg_pool", {x}, out, [x, out, n, c, hw]() {
      accumulate(x, [&](std::vector<double>& gx) {
        const auto g = out.grad();
        for (Index p = 0; p < n * c; ++p) {
          const double v = g[static_cast<std::size_t>(p)] / static_cast<double>(hw);
          for (Index i = 0; i < hw; ++i) gx[static_cast<std::size_t>(p * hw + i)] += v;
        }
      });
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  if (should_record({&x})) {
    active_tape()->record("reshape", {x}, out, [x, out]() {
      accumulate(x, [&](std::vector<double>& gx) {
        const auto g = out.grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
      });
    });
  }
  return out;
}

namespace {
Shape strides_of(const Shape& shape) {
  Shape s(shape.size(), 1);
  for (int a = static_cast<int>(shape.size()) - 2; a >= 0; --a)
    s[static_cast<std::size_t>(a)] = s[static_cast<std::size_t>(a + 1)] * shape[static_cast<std::size_t>(a + 1)];
  return s;
}
}  // namespace

Tensor permute(const Tensor& x, const std::vector<int>& axes) {
  const int r = x.rank();
  if (static_cast<int>(axes.size()) != r) throw DimensionError("permute: axes do not match rank of " + to_string(x.shape()));
  std::vector<bool> used(static_cast<std::size_t>(r), false);
  Shape out_shape(static_cast<std::size_t>(r));
  for (int a = 0; a < r; ++a) {
    const int src = axes[static_cast<std::size_t>(a)];
    if (src < 0 || src >= r || used[static_cast<std::size_t>(src)]) throw DimensionError("permute: invalid axis list");
    used[static_cast<std::size_t>(src)] = true;
    out_shape[static_cast<std::size_t>(a)] = x.dim(src);
  }
  const Shape in_strides = strides_of(x.shape());
  // source offset for every destination element, in destination order
  std::vector<Index> gather(static_cast<std::size_t>(x.size()));
  Shape counter(static_cast<std::size_t>(r), 0);
  for (Index i = 0; i < x.size(); ++i) {
    Index off = 0;
    for (int a = 0; a < r; ++a)
      off += counter[static_cast<std::size_t>(a)] * in_strides[static_cast<std::size_t>(axes[static_cast<std::size_t>(a)])];
    gather[static_cast<std::size_t>(i)] = off;
    for (int a = r - 1; a >= 0; --a) {
      if (++counter[static_cast<std::size_t>(a)] < out_shape[static_cast<std::size_t>(a)]) break;
      counter[static_cast<std::size_t>(a)] = 0;
    }
  }
  Tensor out(out_shape);
  for (Index i = 0; i < x.size(); ++i) out[i] = x[gather[static_cast<std::size_t>(i)]];
  if (should_record({&x})) {
    active_tape()->record("permute", {x}, out, [x, out, gather = std::move(gather)]() {
      accumulate(x, [&](std::vector<double>& gx) {
        const auto g = out.grad();
        for (std::size_t i = 0; i < gather.size(); ++i) gx[static_cast<std::size_t>(gather[i])] += g[i];
      });
    });
  }
  return out;
}

Tensor concat_channels(std::span<const Tensor> inputs) {
  if (inputs.empty()) throw DimensionError("concat_channels: no inputs");
  const Tensor& first = inputs.front();
  require_rank(first, 4, "concat_channels");
  Index channels = 0;
  for (const Tensor& t : inputs) {
    require_rank(t, 4, "concat_channels");
    if (t.dim(0) != first.dim(0) || t.dim(2) != first.dim(2) || t.dim(3) != first.dim(3)) {
      throw DimensionError("concat_channels: " + to_string(t.shape()) + " vs " + to_string(first.shape()));
    }
    channels += t.dim(1);
  }
  const Index n = first.dim(0), hw = first.dim(2) * first.dim(3);
  Tensor out({n, channels, first.dim(2), first.dim(3)});
  for (Index b = 0; b < n; ++b) {
    Index offset = 0;
    for (const Tensor& t : inputs) {
      const Index block = t.dim(1) * hw;
      std::copy_n(t.raw() + b * block, block, out.raw() + (b * channels) * hw + offset);
      offset += block;
    }
  }
  bool record = false;
  for (const Tensor& t : inputs) record = record || should_record({&t});
  if (record) {
    std::vector<Tensor> ins(inputs.begin(), inputs.end());
    active_tape()->record("concat_channels", ins, out, [ins, out, n, hw, channels]() {
      const auto g = out.grad();
      for (Index b = 0; b < n; ++b) {
        Index offset = 0;
        for (const Tensor& t : ins) {
          const Index block = t.dim(1) * hw;
          accumulate(t, [&](std::vector<double>& gt) {
            for (Index i = 0; i < block; ++i)
              gt[static_cast<std::size_t>(b * block + i)] += g[static_cast<std::size_t>(b * channels * hw + offset + i)];
          });
          offset += block;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses and optimizer

Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy_loss");
  const Index n = logits.dim(0), classes = logits.dim(1);
  if (static_cast<Index>(labels.size()) != n) throw DimensionError("cross_entropy_loss: label count differs from batch");
  std::vector<double> probs(static_cast<std::size_t>(logits.size()));
  double loss = 0.0;
  for (Index r = 0; r < n; ++r) {
    const int label = labels[static_cast<std::size_t>(r)];
    if (label < 0 || label >= classes) throw DimensionError("cross_entropy_loss: label out of range");
    const double* row = logits.raw() + r * classes;
    const double mx = *std::max_element(row, row + classes);
    double total = 0.0;
    for (Index c = 0; c < classes; ++c) total += std::exp(row[c] - mx);
    const double log_total = std::log(total) + mx;
    for (Index c = 0; c < classes; ++c) probs[static_cast<std::size_t>(r * classes + c)] = std::exp(row[c] - log_total);
    loss += log_total - row[label];
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(n));
  check_finite(out, "cross_entropy_loss");
  if (should_record({&logits})) {
    std::vector<int> lab(labels.begin(), labels.end());
    active_tape()->record("cross_entropy_loss", {logits}, out,
                          [logits, out, n, classes, probs = std::move(probs), lab = std::move(lab)]() {
                            accumulate(logits, [&](std::vector<double>& gl) {
                              const double g = out.grad()[0] / static_cast<double>(n);
                              for (Index r = 0; r < n; ++r) {
                                for (Index c = 0; c < classes; ++c) {
                                  const auto idx = static_cast<std::size_t>(r * classes + c);
                                  gl[idx] += g * (probs[idx] - (c == lab[static_cast<std::size_t>(r)] ? 1.0 : 0.0));
                                }
                              }
                            });
                          });
  }
  return out;
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  require_same_shape(prediction, target, "mse_loss");
  double total = 0.0;
  for (Index i = 0; i < prediction.size(); ++i) {
    const double d = prediction[i] - target[i];
    total += d * d;
  }
  const double count = static_cast<double>(prediction.size());
  Tensor out = Tensor::scalar(total / count);
  check_finite(out, "mse_loss");
  if (should_record({&prediction, &target})) {
    active_tape()->record("mse_loss", {prediction, target}, out, [prediction, target, out, count]() {
      const double g = out.grad()[0] * 2.0 / count;
      accumulate(prediction, [&](std::vector<double>& gp) {
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g * (prediction.data()[i] - target.data()[i]);
      });
      accumulate(target, [&](std::vector<double>& gt) {
        for (std::size_t i = 0; i < gt.size(); ++i) gt[i] -= g * (prediction.data()[i] - target.data()[i]);
      });
    });
  }
  return out;
}

void sgd_step(std::span<Tensor> parameters, double learning_rate) {
  for (Tensor& p : parameters) {
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto d = p.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= learning_rate * g[i];
  }
}

}  // namespace hrformer
