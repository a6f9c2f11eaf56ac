#pragma once

#include <cmath>
#include <vector>

#include "ctn/param.hpp"

namespace ctn {

/// Bias-corrected Adam over a fixed parameter list. Grads are left untouched;
/// the caller zeroes them between steps.
template <typename T>
class Adam {
 public:
  Adam() = default;

  explicit Adam(std::vector<Param<T>*> params, T lr = static_cast<T>(1e-4),
                T beta1 = static_cast<T>(0.9), T beta2 = static_cast<T>(0.999),
                T eps = static_cast<T>(1e-8))
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (Param<T>* p : params_) slots_.push_back({Tensor<T>(p->value.shape()),
                                                  Tensor<T>(p->value.shape())});
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(double(beta1_), double(t_));
    const double bc2 = 1.0 - std::pow(double(beta2_), double(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Param<T>& p = *params_[k];
      Tensor<T>& m = slots_[k].m;
      Tensor<T>& v = slots_[k].v;
      for (std::size_t i = 0; i < p.value.numel(); ++i) {
        const T g = p.grad[i];
        m[i] = beta1_ * m[i] + (T(1) - beta1_) * g;
        v[i] = beta2_ * v[i] + (T(1) - beta2_) * g * g;
        const T mhat = static_cast<T>(double(m[i]) / bc1);
        const T vhat = static_cast<T>(double(v[i]) / bc2);
        p.value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void zero_grad() {
    for (Param<T>* p : params_) p->zero_grad();
  }

  long step_count() const { return t_; }
  T lr() const { return lr_; }
  void set_lr(T lr) { lr_ = lr; }

  struct Slot {
    Tensor<T> m, v;
  };
  const std::vector<Slot>& slots() const { return slots_; }
  std::vector<Slot>& slots() { return slots_; }
  void set_step_count(long t) { t_ = t; }

 private:
  std::vector<Param<T>*> params_;
  std::vector<Slot> slots_;
  T lr_ = static_cast<T>(1e-4);
  T beta1_ = static_cast<T>(0.9);
  T beta2_ = static_cast<T>(0.999);
  T eps_ = static_cast<T>(1e-8);
  long t_ = 0;
};

}  // namespace ctn
