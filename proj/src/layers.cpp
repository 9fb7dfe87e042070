// SPDX-License-Identifier: Apache-2.0
#include "fbnet/layers.hpp"

#include <cmath>

namespace fbnet {

template <typename T>
Conv2d<T>::Conv2d(int in_channels, int out_channels, int kernel, ops::ConvGeometry geo, bool bias_on,
                  std::mt19937_64& rng)
    : weight({out_channels, in_channels, kernel, kernel}), geometry(geo) {
  const double fan_in = static_cast<double>(in_channels) * kernel * kernel;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (auto& w : weight.data()) w = static_cast<T>(dist(rng));
  if (bias_on) {
    bias = Tensor<T>({out_channels}, T(0));
  }
}

template <typename T>
Tensor<T> Conv2d<T>::operator()(const Tensor<T>& x) const {
  return ops::conv2d(x, weight, bias, geometry);
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, ParamGroup group, TensorList<T>& out) const {
  out.push_back({prefix + ".weight", weight, group, true});
  if (bias.defined()) {
    out.push_back({prefix + ".bias", bias, group, true});
  }
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int channels)
    : gamma({channels}, T(1)),
      beta({channels}, T(0)),
      running_mean({channels}, T(0)),
      running_var({channels}, T(1)) {}

template <typename T>
Tensor<T> BatchNorm2d<T>::operator()(const Tensor<T>& x, const ForwardMode& mode) const {
  // Handles share storage, so running-stat updates land in the layer.
  Tensor<T> rm = running_mean;
  Tensor<T> rv = running_var;
  return ops::batch_norm(x, gamma, beta, rm, rv, mode.training);
}

template <typename T>
void BatchNorm2d<T>::collect(const std::string& prefix, ParamGroup group,
                             TensorList<T>& out) const {
  out.push_back({prefix + ".gamma", gamma, group, true});
  out.push_back({prefix + ".beta", beta, group, true});
  out.push_back({prefix + ".running_mean", running_mean, group, false});
  out.push_back({prefix + ".running_var", running_var, group, false});
}

template <typename T>
ConvBnRelu<T>::ConvBnRelu(int in_channels, int out_channels, int kernel, ops::ConvGeometry geo,
                          std::mt19937_64& rng)
    : conv(in_channels, out_channels, kernel, geo, true, rng), bn(out_channels) {}

template <typename T>
Tensor<T> ConvBnRelu<T>::operator()(const Tensor<T>& x, const ForwardMode& mode) const {
  return ops::relu(bn(conv(x), mode));
}

template <typename T>
void ConvBnRelu<T>::collect(const std::string& prefix, ParamGroup group, TensorList<T>& out) const {
  conv.collect(prefix + ".conv", group, out);
  bn.collect(prefix + ".bn", group, out);
}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class ConvBnRelu<float>;
template class ConvBnRelu<double>;

}  // namespace fbnet
