// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>

#include "fbnet/layers.hpp"

namespace fbnet {

// Channel attention.
//
// For every spatial location (i, j) the C-vector y(:, i, j) is compressed to
// C / ratio values, passed through ReLU, inflated back to C values, and
// normalized with a softmax over the channel axis. The resulting per-location
// probability vector is added to the input:
//
//   out(k, i, j) = softmax_k(f_c(y(:, i, j)))_k + y(k, i, j)
//
// f_c is realized as two 1x1 convolutions, so its weights are shared across
// locations and no information flows between locations.
template <typename T>
class CamBlock {
 public:
  struct Output {
    Tensor<T> features;   // [B x C x H x W]
    Tensor<T> attention;  // [B x C x H x W], sums to 1 over C
  };

  CamBlock() = default;
  CamBlock(int channels, int ratio, std::mt19937_64& rng);

  Output forward_with_attention(const Tensor<T>& y) const;
  Tensor<T> operator()(const Tensor<T>& y) const { return forward_with_attention(y).features; }

  void collect(const std::string& prefix, ParamGroup group, TensorList<T>& out) const;

  int channels() const { return channels_; }
  int ratio() const { return ratio_; }

  Conv2d<T> squeeze;  // C -> C / ratio
  Conv2d<T> expand;   // C / ratio -> C

 private:
  int channels_ = 0;
  int ratio_ = 1;
};

// Spatial self-attention over the N = H x W locations of a low-resolution
// map x (C channels).
//
//   s_q = f_q(x), s_k = f_k(x)   1x1 convs to C_hat channels, viewed C_hat x N
//   s_v = f_v(x)                 1x1 conv to C channels, viewed C x N
//   S_a = row-softmax(s_q^T s_k) N x N; row i is the distribution of query
//                                location i over key locations
//   out(:, i) = sum_j s_v(:, j) S_a(i, j) + x(:, i)
//
// The aggregated values are reshaped back to C x H x W before the residual
// addition. No scaling is applied to the key/query product.
template <typename T>
class SamBlock {
 public:
  struct Output {
    Tensor<T> features;   // [B x C x H x W]
    Tensor<T> attention;  // [B x N x N], row-stochastic
  };

  SamBlock() = default;
  SamBlock(int channels, int key_channels, bool key_query_bias, std::mt19937_64& rng);

  Output forward_with_attention(const Tensor<T>& x) const;
  Tensor<T> operator()(const Tensor<T>& x) const { return forward_with_attention(x).features; }

  // S_a for a single-sample input ([1 x C x H x W]) as an [N x N] tensor.
  Tensor<T> attention_matrix(const Tensor<T>& x) const;

  void collect(const std::string& prefix, ParamGroup group, TensorList<T>& out) const;

  int channels() const { return channels_; }
  int key_channels() const { return key_channels_; }

  Conv2d<T> query;
  Conv2d<T> key;
  Conv2d<T> value;

 private:
  int channels_ = 0;
  int key_channels_ = 0;
};

extern template class CamBlock<float>;
extern template class CamBlock<double>;
extern template class SamBlock<float>;
extern template class SamBlock<double>;

}  // namespace fbnet
