// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mst/core/autograd.hpp"
#include "mst/core/tensor.hpp"

namespace mst::nn {

// Adam with bias correction. Moment buffers are exposed by index (aligned
// with the parameter order) so checkpoints can persist optimizer state and
// resume bit-identically.
template <typename T>
class Adam {
 public:
  Adam(std::vector<ag::Var<T>> params, T lr, T beta1 = T(0.9), T beta2 = T(0.999),
       T eps = T(1e-8))
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p.value().shape());
      v_.emplace_back(p.value().shape());
    }
  }

  // Optional global gradient-norm clipping; 0 disables.
  void set_clip_norm(T c) { clip_ = c; }
  void set_lr(T lr) { lr_ = lr; }
  T lr() const { return lr_; }

  void step() {
    T scale = T(1);
    if (clip_ > T(0)) {
      double sq = 0;
      for (const auto& p : params_)
        if (p.has_grad())
          for (int64_t i = 0; i < p.grad().numel(); ++i)
            sq += static_cast<double>(p.grad()[i]) * p.grad()[i];
      const double norm = std::sqrt(sq);
      if (norm > static_cast<double>(clip_))
        scale = static_cast<T>(static_cast<double>(clip_) / (norm + 1e-12));
    }
    ++t_;
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(b1_), t_));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(b2_), t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      if (!p.has_grad()) continue;
      Tensor<T>& val = p.value();
      const Tensor<T>& g = p.grad();
      Tensor<T>& m = m_[k];
      Tensor<T>& v = v_[k];
      for (int64_t i = 0; i < val.numel(); ++i) {
        const T gi = g[i] * scale;
        m[i] = b1_ * m[i] + (T(1) - b1_) * gi;
        v[i] = b2_ * v[i] + (T(1) - b2_) * gi * gi;
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        val[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t size() const { return params_.size(); }
  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }
  Tensor<T>& moment1(std::size_t i) { return m_[i]; }
  Tensor<T>& moment2(std::size_t i) { return v_[i]; }

 private:
  std::vector<ag::Var<T>> params_;
  std::vector<Tensor<T>> m_, v_;
  T lr_, b1_, b2_, eps_;
  T clip_ = T(0);
  int64_t t_ = 0;
};

}  // namespace mst::nn
