// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "volo/autodiff.hpp"

namespace volo {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// Adam with decoupled weight decay. Decay applies to matrices only; biases,
/// norm parameters and other vectors are left alone.
template <class T>
class AdamW {
 public:
  AdamW(std::vector<Parameter<T>*> params, AdamWOptions opt = {})
      : params_(std::move(params)), opt_(opt) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  void set_lr(double lr) { opt_.lr = lr; }
  double lr() const { return opt_.lr; }
  std::size_t steps() const { return t_; }

  /// One update from the gradients currently stored on the parameters.
  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, double(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, double(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter<T>& p = *params_[i];
      if (!p.requires_grad || p.grad.shape() != p.value.shape()) continue;
      const bool decay = p.value.rank() >= 2;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double g = p.grad[k];
        m[k] = T(opt_.beta1 * m[k] + (1.0 - opt_.beta1) * g);
        v[k] = T(opt_.beta2 * v[k] + (1.0 - opt_.beta2) * g * g);
        const double mh = m[k] / c1, vh = v[k] / c2;
        double w = p.value[k];
        if (decay) w -= opt_.lr * opt_.weight_decay * w;
        w -= opt_.lr * mh / (std::sqrt(vh) + opt_.eps);
        p.value[k] = T(w);
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

 private:
  std::vector<Parameter<T>*> params_;
  AdamWOptions opt_;
  std::vector<Tensor<T>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace volo
