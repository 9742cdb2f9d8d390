#pragma once

#include <span>
#include <vector>

#include "hrformer/tensor.hpp"

namespace hrformer {

inline constexpr double kNormEpsilon = 1e-5;

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// x [n,in], weight [in,out], bias [out] -> [n,out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Max-subtracted softmax over the last axis.
Tensor softmax_lastdim(const Tensor& x);

struct Conv2dOptions {
  Index stride = 1;
  Index padding = 0;
  Index groups = 1;
};

// floor((in + 2*padding - kernel) / stride) + 1
Index conv_output_extent(Index in, Index kernel, Index stride, Index padding);

// x [n,c_in,h,w], weight [c_out, c_in/groups, kh, kw], zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Conv2dOptions& options = {});
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dOptions& options = {});

// Normalizes over axis 1 (channels of an NCHW map, or features of [n,d]).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = kNormEpsilon);

// Fixed-statistics batch norm over axis 1. Only gamma/beta (and x) get gradients.
Tensor batch_norm_inference(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& running_mean,
                            const Tensor& running_var, double eps = kNormEpsilon);
// Moves running statistics toward the batch statistics of x (unbiased variance).
void update_batch_norm_stats(const Tensor& x, Tensor& running_mean, Tensor& running_var, double momentum = 0.1);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);

// Replicates each pixel factor x factor times.
Tensor upsample_nearest(const Tensor& x, Index factor);
// Nearest resize with source index floor(dst * in / out).
Tensor resize_nearest(const Tensor& x, Index out_height, Index out_width);
// [n,c,h,w] -> [n,c]
Tensor global_avg_pool(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& axes);
Tensor concat_channels(std::span<const Tensor> inputs);

// Mean negative log-likelihood of logits [n,classes].
Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> labels);
Tensor mse_loss(const Tensor& prediction, const Tensor& target);

// p <- p - lr * grad(p) for every parameter holding a gradient.
void sgd_step(std::span<Tensor> parameters, double learning_rate);

bool all_finite(const Tensor& x);

}  // namespace hrformer
