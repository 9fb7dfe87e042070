// SPDX-License-Identifier: Apache-2.0
#include "fbnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "fbnet/tape.hpp"

namespace fbnet {

GradCheckReport gradient_check(const std::function<Tensor<double>()>& loss,
                               std::vector<Tensor<double>> wrt, double eps) {
  std::vector<bool> previous;
  for (auto& t : wrt) {
    previous.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(&tape);
    Tensor<double> value = loss();
    tape.backward(value);
  }
  for (auto& t : wrt) {
    auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
    analytic.back().resize(static_cast<std::size_t>(t.numel()), 0.0);
  }

  std::vector<std::vector<double>> numeric;
  double largest = 0;
  {
    TapeScope pause(nullptr);
    for (auto& t : wrt) {
      auto& column = numeric.emplace_back(static_cast<std::size_t>(t.numel()));
      auto d = t.data();
      for (std::size_t i = 0; i < d.size(); ++i) {
        const double saved = d[i];
        d[i] = saved + eps;
        const double up = loss().item();
        d[i] = saved - eps;
        const double down = loss().item();
        d[i] = saved;
        column[i] = (up - down) / (2 * eps);
        largest = std::max(largest, std::abs(column[i]));
      }
    }
  }

  const double floor = 1e-3 * (largest > 0 ? largest : 1.0);
  GradCheckReport report;
  for (std::size_t t = 0; t < wrt.size(); ++t) {
    for (std::size_t i = 0; i < numeric[t].size(); ++i) {
      const double a = analytic[t][i];
      const double n = numeric[t][i];
      const double diff = std::abs(a - n);
      const double denom = std::max({std::abs(a), std::abs(n), floor});
      report.max_abs_error = std::max(report.max_abs_error, diff);
      report.max_relative_error = std::max(report.max_relative_error, diff / denom);
      ++report.coordinates;
    }
    wrt[t].zero_grad();
    wrt[t].set_requires_grad(previous[t]);
  }
  return report;
}

double finite_diff_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                         Tensor<double> x, double eps) {
  return gradient_check([&] { return f(x); }, {x}, eps).max_relative_error;
}

}  // namespace fbnet
