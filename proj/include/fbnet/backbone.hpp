// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <random>
#include <vector>

#include "fbnet/layers.hpp"

namespace fbnet {

// Four-stage residual backbone. The stem (two stride-2 3x3 convolutions)
// brings the input to 1/4 resolution; stage 2 halves it once more and stages
// 3 and 4 keep 1/8 resolution with dilation 2 and 4.
struct BackboneConfig {
  std::array<int, 4> stage_channels{16, 32, 64, 128};
  std::array<int, 4> blocks_per_stage{1, 1, 1, 1};

  static constexpr int kStemStride = 4;
  static constexpr std::array<int, 4> kStageStrides{1, 2, 1, 1};
  static constexpr std::array<int, 4> kStageDilations{1, 1, 2, 4};
  static constexpr int kInputDivisor = 8;

  void validate() const;
  bool operator==(const BackboneConfig&) const = default;
};

// Two 3x3 conv + BN layers with an identity or 1x1-projection skip:
// relu(bn2(conv2(relu(bn1(conv1(x))))) + skip(x)).
template <typename T>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(int in_channels, int out_channels, int stride, int dilation, std::mt19937_64& rng);

  Tensor<T> operator()(const Tensor<T>& x, const ForwardMode& mode) const;
  void collect(const std::string& prefix, ParamGroup group, TensorList<T>& out) const;

  ConvBnRelu<T> first;
  Conv2d<T> second;
  BatchNorm2d<T> second_bn;
  std::optional<Conv2d<T>> projection;
  std::optional<BatchNorm2d<T>> projection_bn;
};

template <typename T>
using BackboneFeatures = std::array<Tensor<T>, 4>;

template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& config, std::mt19937_64& rng);

  // img: [B x 3 x H x W] with H, W divisible by 8. Returns the stage outputs
  // at 1/4, 1/8, 1/8, 1/8 resolution.
  BackboneFeatures<T> operator()(const Tensor<T>& img, const ForwardMode& mode) const;
  void collect(const std::string& prefix, TensorList<T>& out) const;

  const BackboneConfig& config() const { return config_; }

 private:
  BackboneConfig config_;
  ConvBnRelu<T> stem1_, stem2_;
  std::array<std::vector<ResidualBlock<T>>, 4> stages_;
};

// Throws ConfigError unless both extents are positive multiples of 8.
void check_input_extent(std::int64_t height, std::int64_t width);

extern template class Backbone<float>;
extern template class Backbone<double>;

}  // namespace fbnet
