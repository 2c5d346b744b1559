#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "ssc/tensor.hpp"

namespace ssc {

// AdamW with decoupled weight decay:
//   p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
template <typename T>
class AdamW {
  public:
    AdamW(std::vector<TensorPtr<T>> params, T lr, T weight_decay = T(1e-2), T beta1 = T(0.9),
          T beta2 = T(0.999), T eps = T(1e-8))
        : params_(std::move(params)), lr_(lr), weight_decay_(weight_decay), beta1_(beta1),
          beta2_(beta2), eps_(eps) {
        if (lr <= T(0)) throw std::invalid_argument("AdamW: learning rate must be positive");
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i]->data.size(), T(0));
            v_[i].assign(params_[i]->data.size(), T(0));
        }
    }

    void step() {
        ++step_count_;
        T bc1 = T(1) - std::pow(beta1_, static_cast<T>(step_count_));
        T bc2 = T(1) - std::pow(beta2_, static_cast<T>(step_count_));
        for (size_t i = 0; i < params_.size(); ++i) {
            Tensor<T>& p = *params_[i];
            p.ensure_grad();
            for (size_t j = 0; j < p.data.size(); ++j) {
                T g = p.grad[j];
                m_[i][j] = beta1_ * m_[i][j] + (T(1) - beta1_) * g;
                v_[i][j] = beta2_ * v_[i][j] + (T(1) - beta2_) * g * g;
                T m_hat = m_[i][j] / bc1;
                T v_hat = v_[i][j] / bc2;
                p.data[j] -= lr_ * (m_hat / (std::sqrt(v_hat) + eps_) + weight_decay_ * p.data[j]);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

    int64_t step_count() const { return step_count_; }
    void set_step_count(int64_t s) { step_count_ = s; }
    std::vector<std::vector<T>>& moment1() { return m_; }
    std::vector<std::vector<T>>& moment2() { return v_; }
    T lr() const { return lr_; }
    void set_lr(T lr) {
        if (lr <= T(0)) throw std::invalid_argument("AdamW: learning rate must be positive");
        lr_ = lr;
    }

  private:
    std::vector<TensorPtr<T>> params_;
    std::vector<std::vector<T>> m_, v_;
    T lr_, weight_decay_, beta1_, beta2_, eps_;
    int64_t step_count_ = 0;
};

}  // namespace ssc
