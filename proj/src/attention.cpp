// SPDX-License-Identifier: Apache-2.0
#include "fbnet/attention.hpp"

#include "fbnet/error.hpp"

namespace fbnet {

template <typename T>
CamBlock<T>::CamBlock(int channels, int ratio, std::mt19937_64& rng)
    : channels_(channels), ratio_(ratio) {
  if (channels < 1 || ratio < 1 || channels % ratio != 0) {
    throw ConfigError("CAM: bottleneck ratio " + std::to_string(ratio) +
                      " must be a positive divisor of " + std::to_string(channels) + " channels");
  }
  const int hidden = channels / ratio;
  squeeze = Conv2d<T>(channels, hidden, 1, {}, true, rng);
  expand = Conv2d<T>(hidden, channels, 1, {}, true, rng);
}

template <typename T>
typename CamBlock<T>::Output CamBlock<T>::forward_with_attention(const Tensor<T>& y) const {
  if (y.rank() != 4 || y.dim(1) != channels_) {
    throw ConfigError("CAM configured for " + std::to_string(channels_) +
                      " channels received input " + shape_str(y.shape()));
  }
  auto hidden = ops::relu(squeeze(y));
  auto attention = ops::softmax(expand(hidden), 1);
  return {ops::add(attention, y), attention};
}

template <typename T>
void CamBlock<T>::collect(const std::string& prefix, ParamGroup group, TensorList<T>& out) const {
  squeeze.collect(prefix + ".squeeze", group, out);
  expand.collect(prefix + ".expand", group, out);
}

template <typename T>
SamBlock<T>::SamBlock(int channels, int key_channels, bool key_query_bias, std::mt19937_64& rng)
    : channels_(channels), key_channels_(key_channels) {
  if (channels < 1 || key_channels < 1) {
    throw ConfigError("SAM: channel counts must be positive");
  }
  query = Conv2d<T>(channels, key_channels, 1, {}, key_query_bias, rng);
  key = Conv2d<T>(channels, key_channels, 1, {}, key_query_bias, rng);
  value = Conv2d<T>(channels, channels, 1, {}, true, rng);
}

template <typename T>
typename SamBlock<T>::Output SamBlock<T>::forward_with_attention(const Tensor<T>& x) const {
  if (x.rank() != 4 || x.dim(1) != channels_) {
    throw ShapeError("SAM configured for " + std::to_string(channels_) +
                     " channels received input " + shape_str(x.shape()));
  }
  const std::int64_t batch = x.dim(0);
  const std::int64_t n = x.dim(2) * x.dim(3);
  auto q = ops::reshape(query(x), {batch, key_channels_, n});
  auto k = ops::reshape(key(x), {batch, key_channels_, n});
  auto v = ops::reshape(value(x), {batch, channels_, n});

  // [B x N x N]: logits(i, j) = <q(:, i), k(:, j)>
  auto attention = ops::softmax(ops::batch_matmul(q, k, true, false), 2);
  // [B x C x N]: sum_j v(:, j) attention(i, j)
  auto context = ops::batch_matmul(v, attention, false, true);
  auto features = ops::add(ops::reshape(context, x.shape()), x);
  return {features, attention};
}

template <typename T>
Tensor<T> SamBlock<T>::attention_matrix(const Tensor<T>& x) const {
  if (x.rank() != 4 || x.dim(0) != 1) {
    throw ShapeError("SAM attention_matrix expects a single sample, got " + shape_str(x.shape()));
  }
  auto a = forward_with_attention(x).attention;
  return ops::reshape(a, {a.dim(1), a.dim(2)});
}

template <typename T>
void SamBlock<T>::collect(const std::string& prefix, ParamGroup group, TensorList<T>& out) const {
  query.collect(prefix + ".query", group, out);
  key.collect(prefix + ".key", group, out);
  value.collect(prefix + ".value", group, out);
}

template class CamBlock<float>;
template class CamBlock<double>;
template class SamBlock<float>;
template class SamBlock<double>;

}  // namespace fbnet
