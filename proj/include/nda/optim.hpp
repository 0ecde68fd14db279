#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nda/errors.hpp"
#include "nda/graph.hpp"
#include "nda/tensor.hpp"

namespace nda {

/// SGD with classical momentum: v <- momentum * v + g, w <- w - lr * v.
/// Velocity buffers live here and persist across steps.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor*> params, double learning_rate, double momentum)
      : params_(std::move(params)), lr_(learning_rate), momentum_(momentum) {
    if (!(lr_ > 0.0)) throw ContractError("sgd: learning rate must be positive");
    if (momentum_ < 0.0 || momentum_ >= 1.0)
      throw ContractError("sgd: momentum must be in [0, 1), got " + std::to_string(momentum_));
    velocity_.reserve(params_.size());
    for (const Tensor* p : params_) velocity_.emplace_back(p->size(), 0.0);
  }

  void step(const std::vector<Tensor>& grads) {
    if (grads.size() != params_.size())
      throw ContractError("sgd: got " + std::to_string(grads.size()) + " gradients for " +
                          std::to_string(params_.size()) + " parameters");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = *params_[i];
      const Tensor& g = grads[i];
      if (g.shape != p.shape)
        throw ContractError("sgd: gradient shape " + shape_str(g.shape) +
                            " does not match parameter shape " + shape_str(p.shape));
      std::vector<double>& v = velocity_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        v[j] = momentum_ * v[j] + g.data[j];
        p.data[j] -= lr_ * v[j];
      }
    }
  }

  /// Pulls each parameter's gradient from a differentiated graph and steps.
  void step_from(const Graph& g) {
    std::vector<Tensor> grads;
    grads.reserve(params_.size());
    for (const Tensor* p : params_) grads.push_back(g.grad_for(*p));
    step(grads);
  }

  void set_learning_rate(double lr) {
    if (!(lr > 0.0)) throw ContractError("sgd: learning rate must be positive");
    lr_ = lr;
  }
  double learning_rate() const { return lr_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_;
  double momentum_;
};

}  // namespace nda
