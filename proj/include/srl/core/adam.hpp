#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "srl/core/tensor.hpp"

namespace srl::core {

/// Adam with bias correction. Defaults: lr 3e-4, beta1 0.9, beta2 0.999,
/// eps 1e-8. The step only reads gradients; callers zero them between steps.
template <class S>
class Adam {
 public:
  struct Config {
    S lr = S(3e-4);
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S eps = S(1e-8);
  };

  Adam(std::vector<Variable<S>*> params, Config cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      slots_.push_back({Tensor<S>::zeros(p->value.shape), Tensor<S>::zeros(p->value.shape)});
    }
  }

  long step_count() const { return t_; }
  S learning_rate() const { return cfg_.lr; }
  void set_learning_rate(S lr) { cfg_.lr = lr; }

  void step() {
    for (auto* p : params_)
      if (!p->has_grad())
        throw ContractError("adam_step: parameter '" + p->name + "' has no gradient");
    ++t_;
    S c1 = S(1) - pow_t(cfg_.beta1, t_);
    S c2 = S(1) - pow_t(cfg_.beta2, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Variable<S>& p = *params_[i];
      Slot& s = slots_[i];
      for (std::size_t j = 0; j < p.value.data.size(); ++j) {
        S g = p.grad.data[j];
        s.m.data[j] = cfg_.beta1 * s.m.data[j] + (S(1) - cfg_.beta1) * g;
        s.v.data[j] = cfg_.beta2 * s.v.data[j] + (S(1) - cfg_.beta2) * g * g;
        S mhat = s.m.data[j] / c1;
        S vhat = s.v.data[j] / c2;
        p.value.data[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  void zero_grads() {
    for (auto* p : params_) p->zero_grad();
  }

 private:
  struct Slot {
    Tensor<S> m, v;
  };

  static S pow_t(S base, long n) {
    S r = 1;
    for (long i = 0; i < n; ++i) r *= base;
    return r;
  }

  std::vector<Variable<S>*> params_;
  Config cfg_;
  std::vector<Slot> slots_;
  long t_ = 0;
};

/// Halves (by `factor`) the learning rate when the observed validation loss
/// has not improved for `patience` consecutive observations.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor = 0.5, int patience = 5, double min_lr = 1e-6,
                   double threshold = 1e-4)
      : factor_(factor), patience_(patience), min_lr_(min_lr), threshold_(threshold) {}

  /// Feeds one validation-loss observation; returns the (possibly reduced)
  /// learning rate to use next.
  double observe(double loss, double current_lr) {
    if (loss < best_ - threshold_) {
      best_ = loss;
      bad_ = 0;
      return current_lr;
    }
    if (++bad_ > patience_) {
      bad_ = 0;
      return std::max(min_lr_, current_lr * factor_);
    }
    return current_lr;
  }

  double best() const { return best_; }

 private:
  double factor_;
  int patience_;
  double min_lr_;
  double threshold_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
};

}  // namespace srl::core
