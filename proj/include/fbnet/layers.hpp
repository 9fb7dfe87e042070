// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <string>
#include <vector>

#include "fbnet/ops.hpp"

namespace fbnet {

// Which learning-rate group a parameter belongs to.
enum class ParamGroup { kBackbone, kHead };

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  ParamGroup group = ParamGroup::kHead;
  bool trainable = true;  // false for running statistics
};

template <typename T>
using TensorList = std::vector<NamedTensor<T>>;

struct ForwardMode {
  bool training = false;
  // Required when training with dropout enabled.
  std::mt19937_64* dropout_rng = nullptr;
};

// Layers are immutable during a forward/backward step except for batch-norm
// running statistics, which only change in training mode. Eval-mode forward
// passes therefore never write to shared state and can run concurrently.

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  // Kaiming-normal weights (fan-in), zero bias.
  Conv2d(int in_channels, int out_channels, int kernel, ops::ConvGeometry geometry, bool bias,
         std::mt19937_64& rng);

  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParamGroup group, TensorList<T>& out) const;

  int in_channels() const { return static_cast<int>(weight.dim(1)); }
  int out_channels() const { return static_cast<int>(weight.dim(0)); }

  Tensor<T> weight;
  Tensor<T> bias;
  ops::ConvGeometry geometry;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels);

  Tensor<T> operator()(const Tensor<T>& x, const ForwardMode& mode) const;
  void collect(const std::string& prefix, ParamGroup group, TensorList<T>& out) const;

  Tensor<T> gamma, beta, running_mean, running_var;
};

// conv -> batch norm -> ReLU
template <typename T>
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(int in_channels, int out_channels, int kernel, ops::ConvGeometry geometry,
             std::mt19937_64& rng);

  Tensor<T> operator()(const Tensor<T>& x, const ForwardMode& mode) const;
  void collect(const std::string& prefix, ParamGroup group, TensorList<T>& out) const;

  Conv2d<T> conv;
  BatchNorm2d<T> bn;
};

// "Same"-padded 3x3 geometry for a given stride and dilation.
inline ops::ConvGeometry same3x3(int stride = 1, int dilation = 1) {
  return {stride, dilation, dilation};
}

}  // namespace fbnet
