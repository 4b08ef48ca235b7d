#pragma once

#include <cmath>
#include <map>
#include <string>

#include "polyvits/tensor/nn.hpp"

namespace polyvits::nn {

struct AdamWOptions {
  double learning_rate = 2e-4;
  double beta1 = 0.8;
  double beta2 = 0.99;
  double eps = 1e-9;
  double weight_decay = 0.01;
};

struct AdamState {
  Matrix m;
  Matrix v;
};

/// AdamW with decoupled weight decay. Moments are keyed by parameter name so
/// they can be checkpointed and extended alongside the parameters.
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(AdamWOptions options) : options_(options) {}

  const AdamWOptions& options() const { return options_; }
  long step_count() const { return step_; }
  void set_step_count(long step) { step_ = step; }
  std::map<std::string, AdamState>& state() { return state_; }
  const std::map<std::string, AdamState>& state() const { return state_; }

  /// Applies one update at learning rate `lr` to the named parameters.
  template <typename Names>
  void step(const ParameterSet& params, const Names& names, double lr) {
    ++step_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
    for (const auto& name : names) {
      Var p = params.at(name);
      if (p.grad().size() == 0) continue;
      auto& s = state_[name];
      if (s.m.size() == 0) {
        s.m = Matrix::Zero(p.rows(), p.cols());
        s.v = Matrix::Zero(p.rows(), p.cols());
      }
      const Matrix& g = p.grad();
      s.m = options_.beta1 * s.m + (1.0 - options_.beta1) * g;
      s.v = options_.beta2 * s.v + (1.0 - options_.beta2) * g.cwiseProduct(g);
      Matrix& value = p.mutable_value();
      value *= (1.0 - lr * options_.weight_decay);
      value.array() -= lr * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + options_.eps);
    }
  }

 private:
  AdamWOptions options_;
  long step_ = 0;
  std::map<std::string, AdamState> state_;
};

/// Scales gradients of `names` so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename Names>
double clip_grad_norm(const ParameterSet& params, const Names& names, double max_norm) {
  double total = 0.0;
  for (const auto& name : names) {
    const Var p = params.at(name);
    if (p.grad().size() != 0) total += p.grad().squaredNorm();
  }
  total = std::sqrt(total);
  if (max_norm > 0.0 && total > max_norm) {
    const double factor = max_norm / (total + 1e-6);
    for (const auto& name : names) {
      Var p = params.at(name);
      if (p.grad().size() != 0) p.mutable_grad() *= factor;
    }
  }
  return total;
}

}  // namespace polyvits::nn
