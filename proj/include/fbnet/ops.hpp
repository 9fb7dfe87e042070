// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>

#include "fbnet/tape.hpp"
#include "fbnet/tensor.hpp"

// Differentiable tensor operations. Each op computes its forward result
// eagerly and, when should_record() holds, appends its backward rule to the
// active tape. All ops are instantiated for float and double.
namespace fbnet::ops {

inline constexpr int kIgnoreIndex = 255;

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value);

// Reductions to a scalar tensor of shape [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

// Concatenates 4-D tensors along the channel axis (axis 1).
template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts);

// [M x K] . [K x N] -> [M x N]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Batched product over rank-3 tensors, optionally transposing the trailing
// two axes of either operand: op(a)[b] . op(b)[b].
template <typename T>
Tensor<T> batch_matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b);

struct ConvGeometry {
  int stride = 1;
  int dilation = 1;
  int padding = 0;
};

// Output extent of a convolution along one axis; throws ConfigError when the
// result is not positive.
std::int64_t conv_output_extent(std::int64_t in, int kernel, const ConvGeometry& g);

// Cross-correlation. x: [B x Cin x H x W], w: [Cout x Cin x k x k],
// bias: [Cout] or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 const ConvGeometry& geometry);

// Max-subtracted softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis);

// Bilinear resampling of [B x C x H x W] with half-pixel (align-corners=false)
// sampling; source coordinates below zero clamp to zero.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w);
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, int factor);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int kernel, int stride);

// Per-channel normalization of [B x C x H x W]. In training mode batch
// statistics are used and running_mean / running_var are updated in place as
// r <- (1 - momentum) r + momentum s (unbiased variance for the running
// estimate). In eval mode the running statistics are used.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                     T momentum = T(0.1), T eps = T(1e-5));

// Inverted dropout; identity when !training or p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T p, std::mt19937_64& rng, bool training);

// Mean negative log-likelihood over non-ignored pixels.
// logits: [B x L x H x W], labels: [B x H x W].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const IntTensor& labels,
                        int ignore_index = kIgnoreIndex);

// Class index of the largest logit per pixel, lowest index on exact ties.
template <typename T>
IntTensor argmax_channels(const Tensor<T>& logits);

}  // namespace fbnet::ops
