// SPDX-License-Identifier: Apache-2.0
#include "fbnet/optim.hpp"

#include <cmath>

#include "fbnet/error.hpp"

namespace fbnet {

void OptimConfig::validate() const {
  if (!(base_lr > 0)) throw ConfigError("base_lr must be positive");
  if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0, 1)");
  if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
  if (!(lr_power > 0) || lr_power > 1) throw ConfigError("lr_power must lie in (0, 1]");
  if (!(backbone_lr_multiplier > 0)) throw ConfigError("backbone_lr_multiplier must be positive");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (aux_weight < 0) throw ConfigError("aux_weight must be non-negative");
}

double poly_lr(std::int64_t iter, std::int64_t total_iter, double base_lr, double power) {
  if (total_iter <= 0 || iter < 0 || iter > total_iter) {
    throw ContractError("poly_lr: iteration " + std::to_string(iter) + " outside [0, " +
                        std::to_string(total_iter) + "]");
  }
  return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(total_iter),
                            power);
}

template <typename T>
Sgd<T>::Sgd(TensorList<T> params, const OptimConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) velocity_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), T(0));
}

template <typename T>
void Sgd<T>::step(double lr) {
  for (const auto& p : params_) {
    for (T g : p.tensor.grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericalError("non-finite gradient in parameter '" + p.name + "'");
      }
    }
  }
  const T mu = static_cast<T>(cfg_.momentum);
  const T wd = static_cast<T>(cfg_.weight_decay);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    const T rate = static_cast<T>(
        p.group == ParamGroup::kBackbone ? lr * cfg_.backbone_lr_multiplier : lr);
    auto data = p.tensor.data();
    auto grad = p.tensor.grad();
    auto& v = velocity_[k];
    for (std::size_t i = 0; i < v.size(); ++i) {
      const T g = grad.empty() ? T(0) : grad[i];
      v[i] = mu * v[i] + (g + wd * data[i]);
      data[i] -= rate * v[i];
    }
  }
}

template <typename T>
void Sgd<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template class Sgd<float>;
template class Sgd<double>;

}  // namespace fbnet
