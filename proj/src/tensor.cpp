// SPDX-License-Identifier: Apache-2.0
#include "fbnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fbnet/error.hpp"

namespace fbnet {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) {
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "x" : "") << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

void check_extents(const Shape& shape) {
  for (auto e : shape) {
    if (e <= 0) {
      throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
  }
}

int normalize_axis(int axis, int rank) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return a;
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<Impl>()) {
  check_extents(shape);
  impl_->data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
  check_extents(shape);
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw ShapeError("buffer of " + std::to_string(values.size()) +
                     " elements does not match shape " + shape_str(shape));
  }
  impl_->data = std::move(values);
  impl_->shape = std::move(shape);
}

template <typename T>
typename Tensor<T>::Impl& Tensor<T>::impl() const {
  if (!impl_) {
    throw ContractError("use of an undefined tensor");
  }
  return *impl_;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  return impl().shape;
}

template <typename T>
std::int64_t Tensor<T>::dim(int axis) const {
  return shape()[normalize_axis(axis, rank())];
}

template <typename T>
std::int64_t Tensor<T>::numel() const {
  return static_cast<std::int64_t>(impl().data.size());
}

template <typename T>
std::span<T> Tensor<T>::data() {
  return impl().data;
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  return impl().data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  }
  return impl().data[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return impl().requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  impl().requires_grad = on;
  return *this;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return !impl().grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  return impl().grad;
}

template <typename T>
std::span<T> Tensor<T>::grad_mut() const {
  auto& im = impl();
  if (im.grad.empty()) {
    im.grad.assign(im.data.size(), T(0));
  }
  return im.grad;
}

template <typename T>
void Tensor<T>::zero_grad() const {
  auto& im = impl();
  im.grad.clear();
  im.grad.shrink_to_fit();
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor<T>(shape(), std::vector<T>(data().begin(), data().end()));
}

template <typename T>
bool Tensor<T>::all_finite() const {
  auto d = data();
  return std::all_of(d.begin(), d.end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

IntTensor::IntTensor(Shape shape, std::int32_t fill) {
  check_extents(shape);
  data_.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
  shape_ = std::move(shape);
}

IntTensor::IntTensor(Shape shape, std::vector<std::int32_t> values) {
  check_extents(shape);
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw ShapeError("buffer of " + std::to_string(values.size()) +
                     " elements does not match shape " + shape_str(shape));
  }
  data_ = std::move(values);
  shape_ = std::move(shape);
}

std::int64_t IntTensor::dim(int axis) const {
  return shape_[normalize_axis(axis, rank())];
}

}  // namespace fbnet
