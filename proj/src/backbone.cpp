// SPDX-License-Identifier: Apache-2.0
#include "fbnet/backbone.hpp"

#include "fbnet/error.hpp"

namespace fbnet {

void BackboneConfig::validate() const {
  for (int i = 0; i < 4; ++i) {
    if (stage_channels[i] < 1) {
      throw ConfigError("backbone stage " + std::to_string(i + 1) + " width must be positive");
    }
    if (blocks_per_stage[i] < 1) {
      throw ConfigError("backbone stage " + std::to_string(i + 1) + " needs at least one block");
    }
  }
}

void check_input_extent(std::int64_t height, std::int64_t width) {
  const int d = BackboneConfig::kInputDivisor;
  if (height < d || width < d || height % d != 0 || width % d != 0) {
    throw ConfigError("input extent " + std::to_string(height) + "x" + std::to_string(width) +
                      " must be divisible by " + std::to_string(d));
  }
}

template <typename T>
ResidualBlock<T>::ResidualBlock(int in_channels, int out_channels, int stride, int dilation,
                                std::mt19937_64& rng)
    : first(in_channels, out_channels, 3, same3x3(stride, dilation), rng),
      second(out_channels, out_channels, 3, same3x3(1, dilation), true, rng),
      second_bn(out_channels) {
  if (stride != 1 || in_channels != out_channels) {
    projection.emplace(in_channels, out_channels, 1, ops::ConvGeometry{stride, 1, 0}, true, rng);
    projection_bn.emplace(out_channels);
  }
}

template <typename T>
Tensor<T> ResidualBlock<T>::operator()(const Tensor<T>& x, const ForwardMode& mode) const {
  auto path = second_bn(second(first(x, mode)), mode);
  auto skip = projection ? (*projection_bn)((*projection)(x), mode) : x;
  return ops::relu(ops::add(path, skip));
}

template <typename T>
void ResidualBlock<T>::collect(const std::string& prefix, ParamGroup group,
                               TensorList<T>& out) const {
  first.collect(prefix + ".conv1", group, out);
  second.collect(prefix + ".conv2", group, out);
  second_bn.collect(prefix + ".bn2", group, out);
  if (projection) {
    projection->collect(prefix + ".proj", group, out);
    projection_bn->collect(prefix + ".proj_bn", group, out);
  }
}

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& config, std::mt19937_64& rng) : config_(config) {
  config_.validate();
  const auto& ch = config_.stage_channels;
  stem1_ = ConvBnRelu<T>(3, ch[0], 3, same3x3(2), rng);
  stem2_ = ConvBnRelu<T>(ch[0], ch[0], 3, same3x3(2), rng);
  int in = ch[0];
  for (int s = 0; s < 4; ++s) {
    for (int b = 0; b < config_.blocks_per_stage[s]; ++b) {
      const int stride = b == 0 ? BackboneConfig::kStageStrides[s] : 1;
      stages_[s].emplace_back(in, ch[s], stride, BackboneConfig::kStageDilations[s], rng);
      in = ch[s];
    }
  }
}

template <typename T>
BackboneFeatures<T> Backbone<T>::operator()(const Tensor<T>& img, const ForwardMode& mode) const {
  if (img.rank() != 4 || img.dim(1) != 3) {
    throw ShapeError("backbone expects [B x 3 x H x W], got " + shape_str(img.shape()));
  }
  check_input_extent(img.dim(2), img.dim(3));
  BackboneFeatures<T> features;
  Tensor<T> x = stem2_(stem1_(img, mode), mode);
  for (int s = 0; s < 4; ++s) {
    for (const auto& block : stages_[s]) {
      x = block(x, mode);
    }
    features[s] = x;
  }
  return features;
}

template <typename T>
void Backbone<T>::collect(const std::string& prefix, TensorList<T>& out) const {
  const auto group = ParamGroup::kBackbone;
  stem1_.collect(prefix + ".stem1", group, out);
  stem2_.collect(prefix + ".stem2", group, out);
  for (int s = 0; s < 4; ++s) {
    for (std::size_t b = 0; b < stages_[s].size(); ++b) {
      stages_[s][b].collect(prefix + ".stage" + std::to_string(s + 1) + "." + std::to_string(b),
                            group, out);
    }
  }
}

template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class Backbone<float>;
template class Backbone<double>;

}  // namespace fbnet
