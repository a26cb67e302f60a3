#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "evformer/kernels.hpp"
#include "evformer/lif.hpp"
#include "evformer/tensor.hpp"

namespace evf {

// step() consumes param.grad but never modifies it; callers zero grads
// between batches.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(std::vector<Tensor<T>> params, T lr) : params_(std::move(params)), lr_(lr) {
    if (!(lr_ > T(0))) throw std::invalid_argument("optimizer: lr must be positive");
  }
  virtual ~Optimizer() = default;

  virtual void step() = 0;

  void zero_grad() {
    for (Tensor<T>& p : params_) p.zero_grad();
  }
  T lr() const { return lr_; }
  void set_lr(T lr) { lr_ = lr; }

 protected:
  void check_grads() const {
    for (const Tensor<T>& p : params_) {
      if (int64_t(p.node()->grad.size()) != p.numel()) {
        throw StateError("optimizer: parameter has no gradient");
      }
    }
  }

  std::vector<Tensor<T>> params_;
  T lr_;
};

template <typename T>
class Sgd : public Optimizer<T> {
 public:
  using Optimizer<T>::Optimizer;

  void step() override {
    this->check_grads();
    for (Tensor<T>& p : this->params_) {
      kern::Dispatch<T>::axpy(-this->lr_, p.grad().data(), p.data(), size_t(p.numel()));
    }
  }
};

template <typename T>
class Adam : public Optimizer<T> {
 public:
  Adam(std::vector<Tensor<T>> params, T lr, T beta1 = T(0.9), T beta2 = T(0.999),
       T eps = T(1e-8))
      : Optimizer<T>(std::move(params), lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(this->params_.size());
    v_.resize(this->params_.size());
    for (size_t i = 0; i < this->params_.size(); ++i) {
      m_[i].assign(size_t(this->params_[i].numel()), T(0));
      v_[i].assign(size_t(this->params_[i].numel()), T(0));
    }
  }

  void step() override {
    this->check_grads();
    ++t_;
    const T bc1 = T(1) - std::pow(beta1_, T(t_));
    const T bc2 = T(1) - std::pow(beta2_, T(t_));
    for (size_t i = 0; i < this->params_.size(); ++i) {
      Tensor<T>& p = this->params_[i];
      const T* g = p.grad().data();
      T* w = p.data();
      T* m = m_[i].data();
      T* v = v_[i].data();
      for (int64_t j = 0; j < p.numel(); ++j) {
        m[j] = beta1_ * m[j] + (T(1) - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (T(1) - beta2_) * g[j] * g[j];
        const T mhat = m[j] / bc1;
        const T vhat = v[j] / bc2;
        w[j] -= this->lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  T beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace evf
