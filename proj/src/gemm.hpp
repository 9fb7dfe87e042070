// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

namespace fbnet::detail {

// C (m x n, row-major) = or += op(A) . op(B), where op(A) is m x k and op(B)
// is k x n. A is stored k x m when trans_a, B is stored n x k when trans_b.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
          const T* a, const T* b, T* c, bool accumulate) {
  using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const RowMat>;
  Eigen::Map<RowMat> out(c, m, n);
  ConstMap lhs(a, trans_a ? k : m, trans_a ? m : k);
  ConstMap rhs(b, trans_b ? n : k, trans_b ? k : n);

  auto assign = [&](const auto& product) {
    if (accumulate) {
      out.noalias() += product;
    } else {
      out.noalias() = product;
    }
  };
  if (!trans_a && !trans_b) {
    assign(lhs * rhs);
  } else if (!trans_a && trans_b) {
    assign(lhs * rhs.transpose());
  } else if (trans_a && !trans_b) {
    assign(lhs.transpose() * rhs);
  } else {
    assign(lhs.transpose() * rhs.transpose());
  }
}

}  // namespace fbnet::detail
