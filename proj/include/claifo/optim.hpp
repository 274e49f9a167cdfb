#pragma once

#include <cmath>
#include <vector>

#include "claifo/autodiff.hpp"

namespace claifo {

// Adam with bias correction; hyperparameters match the usual defaults.
template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<Param<T>*> params, T lr, T beta1 = T(0.9), T beta2 = T(0.999),
                T eps = T(1e-8))
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Param<T>* p : params_) {
      m_.push_back(Mat<T>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void zero_grad() {
    for (Param<T>* p : params_) p->zero_grad();
  }

  void step() {
    ++t_;
    const T c1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T c2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      Param<T>& p = *params_[i];
      m_[i] = beta1_ * m_[i] + (T(1) - beta1_) * p.grad;
      v_[i] = beta2_ * v_[i] + (T(1) - beta2_) * p.grad.cwiseProduct(p.grad);
      const Mat<T> mhat = m_[i] / c1;
      const Mat<T> vhat = v_[i] / c2;
      p.value -= lr_ * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps_).matrix());
    }
  }

  void set_lr(T lr) { lr_ = lr; }
  T lr() const { return lr_; }
  long steps() const { return t_; }

 private:
  std::vector<Param<T>*> params_;
  T lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Mat<T>> m_, v_;
};

// Polyak averaging for target networks: θ̄ ← (1−τ)·θ̄ + τ·θ.
template <typename T>
void soft_update(std::vector<Param<T>*>& target, const std::vector<Param<T>*>& online, T tau) {
  require(target.size() == online.size(), "soft_update: param list size mismatch");
  for (size_t i = 0; i < target.size(); ++i)
    target[i]->value = (T(1) - tau) * target[i]->value + tau * online[i]->value;
}

template <typename T>
void hard_update(std::vector<Param<T>*>& target, const std::vector<Param<T>*>& online) {
  soft_update(target, online, T(1));
}

}  // namespace claifo
