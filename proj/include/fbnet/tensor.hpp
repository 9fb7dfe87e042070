// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fbnet {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor with an optional gradient buffer.
//
// Tensor is a handle: copies share storage, which is what lets a parameter
// held by a layer and the same parameter referenced from a Tape accumulate
// into one gradient. Use clone() for an independent deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  bool defined() const { return impl_ != nullptr; }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  // Negative axes count from the back.
  std::int64_t dim(int axis) const;
  std::int64_t numel() const;

  std::span<T> data();
  std::span<const T> data() const;
  T* ptr() { return data().data(); }
  const T* ptr() const { return data().data(); }
  T item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  bool has_grad() const;
  // Empty span when no gradient has been accumulated.
  std::span<const T> grad() const;
  // Allocates a zero gradient on first use. Gradient bookkeeping is shallow:
  // it is available through const handles, like the storage it shadows.
  std::span<T> grad_mut() const;
  void zero_grad() const;

  Tensor clone() const;
  bool all_finite() const;

 private:
  struct Impl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  Impl& impl() const;

  std::shared_ptr<Impl> impl_;
};

// Integer label / index tensor. Never participates in differentiation.
class IntTensor {
 public:
  IntTensor() = default;
  explicit IntTensor(Shape shape, std::int32_t fill = 0);
  IntTensor(Shape shape, std::vector<std::int32_t> values);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

  std::span<std::int32_t> data() { return data_; }
  std::span<const std::int32_t> data() const { return data_; }

  bool operator==(const IntTensor&) const = default;

 private:
  Shape shape_;
  std::vector<std::int32_t> data_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

// Elementwise conversion between precisions; result does not require grad.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& src) {
  std::vector<To> out(src.data().begin(), src.data().end());
  return Tensor<To>(src.shape(), std::move(out));
}

}  // namespace fbnet
