// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0
//
// Forward and reverse diffusion arithmetic over plain tensors. The model
// enters only as a callable (z_t, t) -> eps_hat; schedule coefficients stay
// in double regardless of the tensor scalar type.

#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mst/core/rng.hpp"
#include "mst/core/tensor.hpp"
#include "mst/diffusion/schedule.hpp"

namespace mst::diffusion {

template <typename T>
Tensor<T> forward_sample(const Tensor<T>& z0, int64_t t, const Tensor<T>& eps,
                         const NoiseSchedule& s) {
  if (t < 1 || t > s.T) throw std::out_of_range("forward_sample: t out of range");
  if (eps.shape() != z0.shape())
    throw std::invalid_argument("forward_sample: eps shape mismatch");
  const double ab = s.alpha_bar(t);
  const T a = static_cast<T>(std::sqrt(ab));
  const T b = static_cast<T>(std::sqrt(1.0 - ab));
  Tensor<T> out(z0.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

template <typename T>
Tensor<T> predict_mean(const Tensor<T>& z_t, int64_t t, const Tensor<T>& eps_hat,
                       const NoiseSchedule& s) {
  if (t < 1 || t > s.T) throw std::out_of_range("predict_mean: t out of range");
  if (eps_hat.shape() != z_t.shape())
    throw std::invalid_argument("predict_mean: eps_hat shape mismatch");
  const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha(t));
  const double coef = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
  Tensor<T> out(z_t.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = static_cast<T>(inv_sqrt_alpha *
                            (static_cast<double>(z_t[i]) - coef * eps_hat[i]));
  return out;
}

// Single reverse step t -> t-1. noise may be null; it is ignored at t=1.
template <typename T>
Tensor<T> reverse_step(const Tensor<T>& z_t, int64_t t, const Tensor<T>& eps_hat,
                       const Tensor<T>* noise, const NoiseSchedule& s) {
  Tensor<T> mu = predict_mean(z_t, t, eps_hat, s);
  if (t == 1 || noise == nullptr) return mu;
  if (noise->shape() != z_t.shape())
    throw std::invalid_argument("reverse_step: noise shape mismatch");
  const T sig = static_cast<T>(s.sigma(t));
  for (int64_t i = 0; i < mu.numel(); ++i) mu[i] += sig * (*noise)[i];
  return mu;
}

// Reverse hop a -> b (0 <= b < a) on a timestep subsequence. For b == a-1
// this takes exactly the stored single-step path, so a stride of T steps is
// bit-identical to stepping the full chain.
template <typename T>
Tensor<T> reverse_hop(const Tensor<T>& z_a, int64_t a, int64_t b,
                      const Tensor<T>& eps_hat, const Tensor<T>* noise,
                      const NoiseSchedule& s) {
  if (a < 1 || a > s.T || b < 0 || b >= a)
    throw std::out_of_range("reverse_hop: need 0 <= b < a <= T");
  if (b == a - 1) return reverse_step(z_a, a, eps_hat, noise, s);
  const double ab_a = s.alpha_bar(a);
  const double ab_b = s.alpha_bar(b);
  const double alpha_hop = ab_a / ab_b;
  const double beta_hop = 1.0 - alpha_hop;
  const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha_hop);
  const double coef = beta_hop / std::sqrt(1.0 - ab_a);
  const double sig =
      b == 0 ? 0.0 : std::sqrt((1.0 - ab_b) / (1.0 - ab_a) * beta_hop);
  Tensor<T> out(z_a.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = static_cast<T>(inv_sqrt_alpha *
                            (static_cast<double>(z_a[i]) - coef * eps_hat[i]));
  if (sig > 0.0 && noise != nullptr) {
    if (noise->shape() != z_a.shape())
      throw std::invalid_argument("reverse_hop: noise shape mismatch");
    const T sg = static_cast<T>(sig);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += sg * (*noise)[i];
  }
  return out;
}

// Runs the reverse subsequence starting from a given state at ts.front().
// model(z, t) must return eps_hat with z's shape. deterministic=true drops
// every stochastic term (used by closed-form oracles and seeded stitching).
template <typename T, typename Model>
Tensor<T> sample_from(Model&& model, Tensor<T> z, const std::vector<int64_t>& ts,
                      const NoiseSchedule& s, Rng& rng, bool deterministic = false) {
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int64_t a = ts[i];
    const int64_t b = i + 1 < ts.size() ? ts[i + 1] : 0;
    Tensor<T> eps_hat = model(z, a);
    if (deterministic || b == 0) {
      z = reverse_hop<T>(z, a, b, eps_hat, nullptr, s);
    } else {
      Tensor<T> noise = rng.template normal_tensor<T>(z.shape());
      z = reverse_hop<T>(z, a, b, eps_hat, &noise, s);
    }
  }
  return z;
}

// Ancestral sampling from pure noise along an evenly strided subsequence.
template <typename T, typename Model>
Tensor<T> sample_loop(Model&& model, const std::vector<int64_t>& shape,
                      const NoiseSchedule& s, int64_t steps, Rng& rng,
                      bool deterministic = false) {
  if (steps < 1 || steps > s.T)
    throw std::invalid_argument("sample_loop: need 1 <= steps <= T");
  const std::vector<int64_t> ts = stride_timesteps(s.T, steps);
  Tensor<T> z = rng.template normal_tensor<T>(shape);
  return sample_from<T>(model, std::move(z), ts, s, rng, deterministic);
}

// Training objective: mean squared error between predicted and true noise.
template <typename T>
double simple_loss(const Tensor<T>& eps_hat, const Tensor<T>& eps) {
  if (eps_hat.shape() != eps.shape())
    throw std::invalid_argument("simple_loss: shape mismatch");
  double acc = 0;
  for (int64_t i = 0; i < eps.numel(); ++i) {
    const double d = static_cast<double>(eps_hat[i]) - eps[i];
    acc += d * d;
  }
  return acc / static_cast<double>(eps.numel());
}

}  // namespace mst::diffusion
