#pragma once

// Central finite differences as an oracle for reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "polyvits/tensor/autograd.hpp"

namespace polyvits::testing {

struct GradCheckResult {
  double max_relative_error = 0.0;
  double max_abs_analytic = 0.0;
};

/// Relative error per entry is |a - n| / max(|a| + |n|, floor), where the
/// floor keeps entries with vanishing gradients from dividing by ~0.
inline GradCheckResult grad_check(const std::function<ag::Var()>& loss_fn, std::vector<ag::Var> params,
                                  double step = 1e-6, double floor = 1e-6) {
  for (auto& p : params) p.zero_grad();
  const ag::Var loss = loss_fn();
  ag::backward(loss);
  std::vector<Matrix> analytic;
  for (auto& p : params) {
    analytic.push_back(p.grad().size() ? p.grad() : Matrix::Zero(p.rows(), p.cols()));
  }
  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& value = params[k].mutable_value();
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + step;
      double plus = 0.0;
      double minus = 0.0;
      {
        ag::NoGradGuard guard;
        plus = loss_fn().item();
        value.data()[i] = saved - step;
        minus = loss_fn().item();
      }
      value.data()[i] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[k].data()[i];
      const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), floor);
      result.max_relative_error = std::max(result.max_relative_error, rel);
      result.max_abs_analytic = std::max(result.max_abs_analytic, std::abs(a));
    }
  }
  return result;
}

}  // namespace polyvits::testing
