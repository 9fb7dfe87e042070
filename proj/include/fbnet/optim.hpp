// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "fbnet/layers.hpp"

namespace fbnet {

struct OptimConfig {
  double base_lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lr_power = 0.9;
  double backbone_lr_multiplier = 0.1;
  int epochs = 50;
  int batch_size = 8;
  double aux_weight = 0.4;

  void validate() const;
  bool operator==(const OptimConfig&) const = default;
};

// base_lr * (1 - iter / total_iter)^power. Throws ContractError unless
// 0 <= iter <= total_iter and total_iter > 0.
double poly_lr(std::int64_t iter, std::int64_t total_iter, double base_lr, double power = 0.9);

// SGD with momentum and L2 weight decay folded into the gradient:
//   v <- momentum v + (g + weight_decay p)
//   p <- p - lr_eff v
// lr_eff = lr * backbone_lr_multiplier for backbone parameters, lr otherwise.
// A parameter that received no gradient this step is treated as g = 0.
template <typename T>
class Sgd {
 public:
  Sgd(TensorList<T> params, const OptimConfig& cfg);

  // Throws NumericalError naming the first parameter with a non-finite
  // gradient; no parameter is modified in that case.
  void step(double lr);
  void zero_grad();

  const TensorList<T>& params() const { return params_; }
  const std::vector<std::vector<T>>& velocity() const { return velocity_; }

 private:
  TensorList<T> params_;
  std::vector<std::vector<T>> velocity_;
  OptimConfig cfg_;
};

extern template class Sgd<float>;
extern template class Sgd<double>;

}  // namespace fbnet
