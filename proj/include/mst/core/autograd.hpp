// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small reverse-mode autodiff tape. Ops build a graph of shared Node
// objects; backward() walks it once in reverse topological order. The set
// of ops is exactly what the models here need — dense/conv layers, group
// normalization, attention primitives, pointwise nonlinearities and the
// training losses. Everything is templated on the scalar type; float is
// the production path (backed by the dispatched kernels), double exists
// for finite-difference gradient verification.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "mst/core/kernels.hpp"
#include "mst/core/tensor.hpp"

namespace mst::ag {

struct GradMode {
  static bool& flag() {
    thread_local bool enabled = true;
    return enabled;
  }
  static bool enabled() { return flag(); }
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::flag()) { GradMode::flag() = false; }
  ~NoGradGuard() { GradMode::flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backfn;

  Tensor<T>& grad_buf() {
    if (!has_grad) {
      grad = Tensor<T>(value.shape());
      has_grad = true;
    }
    return grad;
  }
};

namespace detail {

template <typename T>
void vadd_into(T* acc, const T* x, int64_t n) {
  for (int64_t i = 0; i < n; ++i) acc[i] += x[i];
}
template <>
inline void vadd_into<float>(float* acc, const float* x, int64_t n) {
  kernels::axpy_f32(1.0f, x, acc, n);
}

template <typename T>
void accum(Node<T>& node, const Tensor<T>& delta) {
  if (!node.requires_grad) return;
  vadd_into(node.grad_buf().data(), delta.data(), delta.numel());
}

}  // namespace detail

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var constant(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    return Var(std::move(n));
  }
  static Var param(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& value() { return node_->value; }
  const Tensor<T>& grad() const {
    if (!node_->has_grad) throw std::runtime_error("Var: no gradient accumulated");
    return node_->grad;
  }
  bool has_grad() const { return node_ && node_->has_grad; }
  void zero_grad() {
    node_->has_grad = false;
    node_->grad = Tensor<T>();
  }

  // Reverse pass from a scalar root. Interior graph edges are released as
  // they are consumed so a training step leaves only leaf params alive.
  void backward() {
    if (!node_) throw std::runtime_error("backward: undefined Var");
    if (node_->value.numel() != 1)
      throw std::runtime_error("backward: root must be a scalar");
    if (!node_->requires_grad) return;

    // Strong refs keep nodes alive while edges are torn down below.
    std::vector<std::shared_ptr<Node<T>>> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack;
    stack.emplace_back(node_, 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        const std::shared_ptr<Node<T>>& p = n->parents[idx++];
        if (p->requires_grad && seen.insert(p.get()).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }

    node_->grad_buf()[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = it->get();
      if (n->backfn && n->has_grad) n->backfn(*n);
      if (n->backfn) {
        n->backfn = nullptr;
        n->parents.clear();
        if (n != node_.get()) {
          // Interior grads are dead weight once their backfn has run.
          n->grad = Tensor<T>();
          n->has_grad = false;
        }
      }
    }
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> make_op(Tensor<T> value, std::initializer_list<Var<T>> parents,
               std::function<void(Node<T>&)> backfn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (GradMode::enabled()) {
    bool req = false;
    for (const auto& p : parents) req = req || p.node()->requires_grad;
    if (req) {
      n->requires_grad = true;
      for (const auto& p : parents) n->parents.push_back(p.node_ptr());
      n->backfn = std::move(backfn);
    }
  }
  return Var<T>(std::move(n));
}

// ---------------------------------------------------------------------------
// Pointwise ops

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.value().shape() != b.value().shape())
    throw std::invalid_argument("add: shape mismatch");
  Tensor<T> out(a.value().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_op<T>(std::move(out), {a, b}, [an, bn](Node<T>& self) {
    detail::accum(*an, self.grad);
    detail::accum(*bn, self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  if (a.value().shape() != b.value().shape())
    throw std::invalid_argument("sub: shape mismatch");
  Tensor<T> out(a.value().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_op<T>(std::move(out), {a, b}, [an, bn](Node<T>& self) {
    detail::accum(*an, self.grad);
    if (bn->requires_grad) {
      Tensor<T>& g = bn->grad_buf();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a.value().shape() != b.value().shape())
    throw std::invalid_argument("mul: shape mismatch");
  Tensor<T> out(a.value().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_op<T>(std::move(out), {a, b}, [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      Tensor<T>& g = an->grad_buf();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      Tensor<T>& g = bn->grad_buf();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * an->value[i];
    }
  });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, T s) {
  Tensor<T> out(a.value().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * s;
  auto an = a.node_ptr();
  return make_op<T>(std::move(out), {a}, [an, s](Node<T>& self) {
    if (!an->requires_grad) return;
    Tensor<T>& g = an->grad_buf();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * s;
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> out(a.value().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + s;
  auto an = a.node_ptr();
  return make_op<T>(std::move(out), {a},
                    [an](Node<T>& self) { detail::accum(*an, self.grad); });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
  Tensor<T> out(x.value().shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    const T v = x.value()[i];
    out[i] = v / (T(1) + std::exp(-v));
  }
  auto xn = x.node_ptr();
  return make_op<T>(std::move(out), {x}, [xn](Node<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& g = xn->grad_buf();
    for (int64_t i = 0; i < g.numel(); ++i) {
      const T v = xn->value[i];
      const T s = T(1) / (T(1) + std::exp(-v));
      g[i] += self.grad[i] * s * (T(1) + v * (T(1) - s));
    }
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Tensor<T> out(x.value().shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    const T v = x.value()[i];
    out[i] = v > T(0) ? v : slope * v;
  }
  auto xn = x.node_ptr();
  return make_op<T>(std::move(out), {x}, [xn, slope](Node<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& g = xn->grad_buf();
    for (int64_t i = 0; i < g.numel(); ++i)
      g[i] += self.grad[i] * (xn->value[i] > T(0) ? T(1) : slope);
  });
}

template <typename T>
Var<T> tanh_op(const Var<T>& x) {
  Tensor<T> out(x.value().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(x.value()[i]);
  auto xn = x.node_ptr();
  return make_op<T>(std::move(out), {x}, [xn](Node<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& g = xn->grad_buf();
    for (int64_t i = 0; i < g.numel(); ++i) {
      const T y = self.value[i];
      g[i] += self.grad[i] * (T(1) - y * y);
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out(x.value().shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = T(1) / (T(1) + std::exp(-x.value()[i]));
  auto xn = x.node_ptr();
  return make_op<T>(std::move(out), {x}, [xn](Node<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& g = xn->grad_buf();
    for (int64_t i = 0; i < g.numel(); ++i) {
      const T y = self.value[i];
      g[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
Var<T> sin_op(const Var<T>& x) {
  Tensor<T> out(x.value().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::sin(x.value()[i]);
  auto xn = x.node_ptr();
  return make_op<T>(std::move(out), {x}, [xn](Node<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& g = xn->grad_buf();
    for (int64_t i = 0; i < g.numel(); ++i)
      g[i] += self.grad[i] * std::cos(xn->value[i]);
  });
}

template <typename T>
Var<T> cos_op(const Var<T>& x) {
  Tensor<T> out(x.value().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::cos(x.value()[i]);
  auto xn = x.node_ptr();
  return make_op<T>(std::move(out), {x}, [xn](Node<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& g = xn->grad_buf();
    for (int64_t i = 0; i < g.numel(); ++i)
      g[i] -= self.grad[i] * std::sin(xn->value[i]);
  });
}

template <typename T>
Var<T> exp_op(const Var<T>& x) {
  Tensor<T> out(x.value().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(x.value()[i]);
  auto xn = x.node_ptr();
  return make_op<T>(std::move(out), {x}, [xn](Node<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& g = xn->grad_buf();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * self.value[i];
  });
}

// Gradient passes only where the input lies inside [lo, hi].
template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  Tensor<T> out(x.value().shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = std::min(hi, std::max(lo, x.value()[i]));
  auto xn = x.node_ptr();
  return make_op<T>(std::move(out), {x}, [xn, lo, hi](Node<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& g = xn->grad_buf();
    for (int64_t i = 0; i < g.numel(); ++i)
      if (xn->value[i] >= lo && xn->value[i] <= hi) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  return Var<T>::constant(x.value());
}

template <typename T>
Var<T> reshape(const Var<T>& x, std::vector<int64_t> shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  auto xn = x.node_ptr();
  return make_op<T>(std::move(out), {x}, [xn](Node<T>& self) {
    if (!xn->requires_grad) return;
    detail::vadd_into(xn->grad_buf().data(), self.grad.data(), self.grad.numel());
  });
}

// ---------------------------------------------------------------------------
// Dense algebra

// C = op(a) * op(b) for 2-D tensors.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool ta = false, bool tb = false) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2)
    throw std::invalid_argument("matmul: rank-2 tensors required");
  const int64_t M = ta ? av.dim(1) : av.dim(0);
  const int64_t K = ta ? av.dim(0) : av.dim(1);
  const int64_t Kb = tb ? bv.dim(1) : bv.dim(0);
  const int64_t N = tb ? bv.dim(0) : bv.dim(1);
  if (K != Kb) throw std::invalid_argument("matmul: inner dimension mismatch");
  Tensor<T> out({M, N});
  kernels::gemm<T>(ta, tb, M, N, K, T(1), av.data(), av.dim(1), bv.data(),
                   bv.dim(1), T(0), out.data(), N);
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_op<T>(std::move(out), {a, b}, [an, bn, ta, tb, M, N, K](Node<T>& self) {
    const T* G = self.grad.data();
    if (an->requires_grad) {
      Tensor<T>& ga = an->grad_buf();
      if (!ta) {
        // dA = G * op(B)^T
        kernels::gemm<T>(false, !tb, M, K, N, T(1), G, N, bn->value.data(),
                         bn->value.dim(1), T(1), ga.data(), ga.dim(1));
      } else {
        // stored A is K x M: dA_stored = op(B) * G^T
        kernels::gemm<T>(tb, true, K, M, N, T(1), bn->value.data(),
                         bn->value.dim(1), G, N, T(1), ga.data(), ga.dim(1));
      }
    }
    if (bn->requires_grad) {
      Tensor<T>& gb = bn->grad_buf();
      if (!tb) {
        // dB = op(A)^T * G
        kernels::gemm<T>(!ta, false, K, N, M, T(1), an->value.data(),
                         an->value.dim(1), G, N, T(1), gb.data(), gb.dim(1));
      } else {
        // stored B is N x K: dB_stored = G^T * op(A)
        kernels::gemm<T>(true, ta, N, K, M, T(1), G, N, an->value.data(),
                         an->value.dim(1), T(1), gb.data(), gb.dim(1));
      }
    }
  });
}

// Batched matmul over rank-3 tensors [B, r, c].
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool ta = false, bool tb = false) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0))
    throw std::invalid_argument("bmm: rank-3 tensors with equal batch required");
  const int64_t B = av.dim(0);
  const int64_t M = ta ? av.dim(2) : av.dim(1);
  const int64_t K = ta ? av.dim(1) : av.dim(2);
  const int64_t Kb = tb ? bv.dim(2) : bv.dim(1);
  const int64_t N = tb ? bv.dim(1) : bv.dim(2);
  if (K != Kb) throw std::invalid_argument("bmm: inner dimension mismatch");
  Tensor<T> out({B, M, N});
  const int64_t as = av.dim(1) * av.dim(2);
  const int64_t bs = bv.dim(1) * bv.dim(2);
  for (int64_t i = 0; i < B; ++i)
    kernels::gemm<T>(ta, tb, M, N, K, T(1), av.data() + i * as, av.dim(2),
                     bv.data() + i * bs, bv.dim(2), T(0), out.data() + i * M * N, N);
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_op<T>(std::move(out), {a, b},
                    [an, bn, ta, tb, B, M, N, K, as, bs](Node<T>& self) {
    for (int64_t i = 0; i < B; ++i) {
      const T* G = self.grad.data() + i * M * N;
      const T* A = an->value.data() + i * as;
      const T* Bp = bn->value.data() + i * bs;
      const int64_t lda = an->value.dim(2);
      const int64_t ldb = bn->value.dim(2);
      if (an->requires_grad) {
        T* ga = an->grad_buf().data() + i * as;
        if (!ta)
          kernels::gemm<T>(false, !tb, M, K, N, T(1), G, N, Bp, ldb, T(1), ga, lda);
        else
          kernels::gemm<T>(tb, true, K, M, N, T(1), Bp, ldb, G, N, T(1), ga, lda);
      }
      if (bn->requires_grad) {
        T* gb = bn->grad_buf().data() + i * bs;
        if (!tb)
          kernels::gemm<T>(!ta, false, K, N, M, T(1), A, lda, G, N, T(1), gb, ldb);
        else
          kernels::gemm<T>(true, ta, N, K, M, T(1), G, N, A, lda, T(1), gb, ldb);
      }
    }
  });
}

// y = x * w^T + bias. x may be [R, in] or [B, M, in]; w is [out, in].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  const bool rank3 = xv.rank() == 3;
  if (!rank3 && xv.rank() != 2) throw std::invalid_argument("linear: rank-2/3 input");
  const int64_t in = xv.dim(xv.rank() - 1);
  if (wv.rank() != 2 || wv.dim(1) != in)
    throw std::invalid_argument("linear: weight shape mismatch");
  const int64_t out_f = wv.dim(0);
  const int64_t R = xv.numel() / in;
  std::vector<int64_t> oshape = xv.shape();
  oshape.back() = out_f;
  Tensor<T> out(oshape);
  kernels::gemm<T>(false, true, R, out_f, in, T(1), xv.data(), in, wv.data(), in,
                   T(0), out.data(), out_f);
  const bool has_bias = bias.defined();
  if (has_bias) {
    const T* bp = bias.value().data();
    for (int64_t r = 0; r < R; ++r)
      detail::vadd_into(out.data() + r * out_f, bp, out_f);
  }
  auto xn = x.node_ptr();
  auto wn = w.node_ptr();
  auto bn = has_bias ? bias.node_ptr() : nullptr;
  auto backfn = [xn, wn, bn, R, in, out_f](Node<T>& self) {
    const T* G = self.grad.data();
    if (xn->requires_grad)
      kernels::gemm<T>(false, false, R, in, out_f, T(1), G, out_f,
                       wn->value.data(), in, T(1), xn->grad_buf().data(), in);
    if (wn->requires_grad)
      kernels::gemm<T>(true, false, out_f, in, R, T(1), G, out_f,
                       xn->value.data(), in, T(1), wn->grad_buf().data(), in);
    if (bn && bn->requires_grad) {
      T* gb = bn->grad_buf().data();
      for (int64_t r = 0; r < R; ++r) detail::vadd_into(gb, G + r * out_f, out_f);
    }
  };
  if (has_bias) return make_op<T>(std::move(out), {x, w, bias}, backfn);
  return make_op<T>(std::move(out), {x, w}, backfn);
}

// ---------------------------------------------------------------------------
// Convolutions (NCHW / NCL), via im2col + GEMM.

namespace detail {

template <typename T>
void im2col2d(const T* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
              int64_t sh, int64_t sw, int64_t ph, int64_t pw, int64_t Ho,
              int64_t Wo, T* col) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        T* dst = col + ((c * kh + ki) * kw + kj) * (Ho * Wo);
        for (int64_t oi = 0; oi < Ho; ++oi) {
          const int64_t ii = oi * sh - ph + ki;
          if (ii < 0 || ii >= H) {
            std::fill(dst + oi * Wo, dst + (oi + 1) * Wo, T(0));
            continue;
          }
          const T* src = x + (c * H + ii) * W;
          for (int64_t oj = 0; oj < Wo; ++oj) {
            const int64_t jj = oj * sw - pw + kj;
            dst[oi * Wo + oj] = (jj < 0 || jj >= W) ? T(0) : src[jj];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im2d(const T* col, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
              int64_t sh, int64_t sw, int64_t ph, int64_t pw, int64_t Ho,
              int64_t Wo, T* x) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        const T* src = col + ((c * kh + ki) * kw + kj) * (Ho * Wo);
        for (int64_t oi = 0; oi < Ho; ++oi) {
          const int64_t ii = oi * sh - ph + ki;
          if (ii < 0 || ii >= H) continue;
          T* dst = x + (c * H + ii) * W;
          for (int64_t oj = 0; oj < Wo; ++oj) {
            const int64_t jj = oj * sw - pw + kj;
            if (jj >= 0 && jj < W) dst[jj] += src[oi * Wo + oj];
          }
        }
      }
    }
  }
}

}  // namespace detail

// conv2d with separate vertical/horizontal stride and padding.
template <typename T>
Var<T> conv2d_hw(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int64_t sh,
                 int64_t sw, int64_t ph, int64_t pw) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (xv.rank() != 4 || wv.rank() != 4)
    throw std::invalid_argument("conv2d: NCHW input and OIHW weight required");
  const int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int64_t Co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  if (wv.dim(1) != C) throw std::invalid_argument("conv2d: channel mismatch");
  const int64_t Ho = (H + 2 * ph - kh) / sh + 1;
  const int64_t Wo = (W + 2 * pw - kw) / sw + 1;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: output would be empty");
  const int64_t K = C * kh * kw;
  const int64_t P = Ho * Wo;

  Tensor<T> out({N, Co, Ho, Wo});
  Tensor<T> col({K, P});
  const bool has_bias = bias.defined();
  for (int64_t n = 0; n < N; ++n) {
    detail::im2col2d(xv.data() + n * C * H * W, C, H, W, kh, kw, sh, sw, ph, pw,
                     Ho, Wo, col.data());
    T* y = out.data() + n * Co * P;
    kernels::gemm<T>(false, false, Co, P, K, T(1), wv.data(), K, col.data(), P,
                     T(0), y, P);
    if (has_bias)
      for (int64_t co = 0; co < Co; ++co) {
        const T b = bias.value()[co];
        T* row = y + co * P;
        for (int64_t p = 0; p < P; ++p) row[p] += b;
      }
  }

  auto xn = x.node_ptr();
  auto wn = w.node_ptr();
  auto bn = has_bias ? bias.node_ptr() : nullptr;
  auto backfn = [xn, wn, bn, N, C, H, W, Co, kh, kw, sh, sw, ph, pw, Ho, Wo, K,
                 P](Node<T>& self) {
    Tensor<T> col({K, P});
    Tensor<T> dcol({K, P});
    for (int64_t n = 0; n < N; ++n) {
      const T* G = self.grad.data() + n * Co * P;
      if (wn->requires_grad) {
        detail::im2col2d(xn->value.data() + n * C * H * W, C, H, W, kh, kw, sh,
                         sw, ph, pw, Ho, Wo, col.data());
        kernels::gemm<T>(false, true, Co, K, P, T(1), G, P, col.data(), P, T(1),
                         wn->grad_buf().data(), K);
      }
      if (bn && bn->requires_grad) {
        T* gb = bn->grad_buf().data();
        for (int64_t co = 0; co < Co; ++co) {
          T s = 0;
          const T* row = G + co * P;
          for (int64_t p = 0; p < P; ++p) s += row[p];
          gb[co] += s;
        }
      }
      if (xn->requires_grad) {
        kernels::gemm<T>(true, false, K, P, Co, T(1), wn->value.data(), K, G, P,
                         T(0), dcol.data(), P);
        detail::col2im2d(dcol.data(), C, H, W, kh, kw, sh, sw, ph, pw, Ho, Wo,
                         xn->grad_buf().data() + n * C * H * W);
      }
    }
  };
  if (has_bias) return make_op<T>(std::move(out), {x, w, bias}, backfn);
  return make_op<T>(std::move(out), {x, w}, backfn);
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int64_t stride,
              int64_t pad) {
  return conv2d_hw(x, w, bias, stride, stride, pad, pad);
}

template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int64_t stride,
              int64_t pad) {
  // Treat [N, C, L] as [N, C, 1, L].
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (xv.rank() != 3 || wv.rank() != 3)
    throw std::invalid_argument("conv1d: NCL input and OIK weight required");
  Var<T> x4 = reshape(x, {xv.dim(0), xv.dim(1), int64_t(1), xv.dim(2)});
  Var<T> w4 = reshape(w, {wv.dim(0), wv.dim(1), int64_t(1), wv.dim(2)});
  Var<T> y = conv2d_hw(x4, w4, bias, 1, stride, 0, pad);
  const auto& ys = y.value().shape();
  return reshape(y, {ys[0], ys[1], ys[3]});
}

// ---------------------------------------------------------------------------
// Normalization

template <typename T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  int64_t groups, T eps = T(1e-5)) {
  const auto& xv = x.value();
  if (xv.rank() != 4 && xv.rank() != 3)
    throw std::invalid_argument("group_norm: rank-3/4 input required");
  const int64_t N = xv.dim(0), C = xv.dim(1);
  const int64_t S = xv.numel() / (N * C);  // spatial size
  if (C % groups != 0) throw std::invalid_argument("group_norm: C % groups != 0");
  const int64_t cpg = C / groups;
  const int64_t m = cpg * S;

  Tensor<T> out(xv.shape());
  Tensor<T> mean({N, groups});
  Tensor<T> rstd({N, groups});
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t g = 0; g < groups; ++g) {
      const T* base = xv.data() + (n * C + g * cpg) * S;
      double mu = 0;
      for (int64_t i = 0; i < m; ++i) mu += static_cast<double>(base[i]);
      mu /= static_cast<double>(m);
      double var = 0;
      for (int64_t i = 0; i < m; ++i) {
        const double d = static_cast<double>(base[i]) - mu;
        var += d * d;
      }
      var /= static_cast<double>(m);
      const double rs = 1.0 / std::sqrt(var + static_cast<double>(eps));
      mean.at(n, g) = static_cast<T>(mu);
      rstd.at(n, g) = static_cast<T>(rs);
      T* o = out.data() + (n * C + g * cpg) * S;
      for (int64_t c = 0; c < cpg; ++c) {
        const T gm = gamma.value()[g * cpg + c];
        const T bt = beta.value()[g * cpg + c];
        const T* xi = base + c * S;
        T* oi = o + c * S;
        for (int64_t s = 0; s < S; ++s)
          oi[s] = static_cast<T>((static_cast<double>(xi[s]) - mu) * rs) * gm + bt;
      }
    }
  }

  auto xn = x.node_ptr();
  auto gn = gamma.node_ptr();
  auto bn = beta.node_ptr();
  return make_op<T>(std::move(out), {x, gamma, beta},
                    [xn, gn, bn, N, C, S, groups, cpg, m, mean, rstd](Node<T>& self) {
    for (int64_t n = 0; n < N; ++n) {
      for (int64_t g = 0; g < groups; ++g) {
        const T* xb = xn->value.data() + (n * C + g * cpg) * S;
        const T* gb = self.grad.data() + (n * C + g * cpg) * S;
        const double mu = static_cast<double>(mean.at(n, g));
        const double rs = static_cast<double>(rstd.at(n, g));
        // Accumulate the two group-wide reductions of dxhat.
        double sum_dxhat = 0, sum_dxhat_xhat = 0;
        for (int64_t c = 0; c < cpg; ++c) {
          const double gm = static_cast<double>(gn->value[g * cpg + c]);
          for (int64_t s = 0; s < S; ++s) {
            const double xhat = (static_cast<double>(xb[c * S + s]) - mu) * rs;
            const double dxh = static_cast<double>(gb[c * S + s]) * gm;
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xhat;
          }
        }
        if (gn->requires_grad || bn->requires_grad) {
          for (int64_t c = 0; c < cpg; ++c) {
            double dg = 0, db = 0;
            for (int64_t s = 0; s < S; ++s) {
              const double xhat = (static_cast<double>(xb[c * S + s]) - mu) * rs;
              const double gr = static_cast<double>(gb[c * S + s]);
              dg += gr * xhat;
              db += gr;
            }
            if (gn->requires_grad) gn->grad_buf()[g * cpg + c] += static_cast<T>(dg);
            if (bn->requires_grad) bn->grad_buf()[g * cpg + c] += static_cast<T>(db);
          }
        }
        if (xn->requires_grad) {
          T* gx = xn->grad_buf().data() + (n * C + g * cpg) * S;
          const double inv_m = 1.0 / static_cast<double>(m);
          for (int64_t c = 0; c < cpg; ++c) {
            const double gm = static_cast<double>(gn->value[g * cpg + c]);
            for (int64_t s = 0; s < S; ++s) {
              const double xhat = (static_cast<double>(xb[c * S + s]) - mu) * rs;
              const double dxh = static_cast<double>(gb[c * S + s]) * gm;
              gx[c * S + s] += static_cast<T>(
                  rs * (dxh - inv_m * sum_dxhat - xhat * inv_m * sum_dxhat_xhat));
            }
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax over the last dimension (rank 2 or 3).

template <typename T>
Var<T> softmax_lastdim(const Var<T>& x) {
  const auto& xv = x.value();
  if (xv.rank() < 2) throw std::invalid_argument("softmax: rank >= 2 required");
  const int64_t D = xv.dim(xv.rank() - 1);
  const int64_t R = xv.numel() / D;
  Tensor<T> out(xv.shape());
  for (int64_t r = 0; r < R; ++r) {
    const T* xi = xv.data() + r * D;
    T* oi = out.data() + r * D;
    T mx = xi[0];
    for (int64_t i = 1; i < D; ++i) mx = xi[i] > mx ? xi[i] : mx;
    double sum = 0;
    for (int64_t i = 0; i < D; ++i) {
      const double e = std::exp(static_cast<double>(xi[i] - mx));
      oi[i] = static_cast<T>(e);
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int64_t i = 0; i < D; ++i) oi[i] = static_cast<T>(oi[i] * inv);
  }
  auto xn = x.node_ptr();
  return make_op<T>(std::move(out), {x}, [xn, R, D](Node<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& gx = xn->grad_buf();
    for (int64_t r = 0; r < R; ++r) {
      const T* y = self.value.data() + r * D;
      const T* g = self.grad.data() + r * D;
      double dot = 0;
      for (int64_t i = 0; i < D; ++i) dot += static_cast<double>(g[i]) * y[i];
      T* go = gx.data() + r * D;
      for (int64_t i = 0; i < D; ++i)
        go[i] += y[i] * (g[i] - static_cast<T>(dot));
    }
  });
}

// ---------------------------------------------------------------------------
// Structure ops

// [N, C, H, W] -> [N, H*W, C]
template <typename T>
Var<T> flatten_tokens(const Var<T>& x) {
  const auto& xv = x.value();
  if (xv.rank() != 4) throw std::invalid_argument("flatten_tokens: rank-4 required");
  const int64_t N = xv.dim(0), C = xv.dim(1), S = xv.dim(2) * xv.dim(3);
  Tensor<T> out({N, S, C});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* src = xv.data() + (n * C + c) * S;
      T* dst = out.data() + n * S * C + c;
      for (int64_t s = 0; s < S; ++s) dst[s * C] = src[s];
    }
  auto xn = x.node_ptr();
  return make_op<T>(std::move(out), {x}, [xn, N, C, S](Node<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& gx = xn->grad_buf();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        T* dst = gx.data() + (n * C + c) * S;
        const T* src = self.grad.data() + n * S * C + c;
        for (int64_t s = 0; s < S; ++s) dst[s] += src[s * C];
      }
  });
}

// [N, H*W, C] -> [N, C, H, W]
template <typename T>
Var<T> unflatten_tokens(const Var<T>& x, int64_t H, int64_t W) {
  const auto& xv = x.value();
  if (xv.rank() != 3 || xv.dim(1) != H * W)
    throw std::invalid_argument("unflatten_tokens: shape mismatch");
  const int64_t N = xv.dim(0), S = xv.dim(1), C = xv.dim(2);
  Tensor<T> out({N, C, H, W});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      T* dst = out.data() + (n * C + c) * S;
      const T* src = xv.data() + n * S * C + c;
      for (int64_t s = 0; s < S; ++s) dst[s] = src[s * C];
    }
  auto xn = x.node_ptr();
  return make_op<T>(std::move(out), {x}, [xn, N, C, S](Node<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& gx = xn->grad_buf();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        const T* src = self.grad.data() + (n * C + c) * S;
        T* dst = gx.data() + n * S * C + c;
        for (int64_t s = 0; s < S; ++s) dst[s * C] += src[s];
      }
  });
}

// Concatenation along axis 1 (channels for NCHW/NCL, tokens for [B, M, d]).
template <typename T>
Var<T> concat_axis1(const Var<T>& a, const Var<T>& b) {
  const auto& avv = a.value();
  const auto& bvv = b.value();
  if (avv.rank() != bvv.rank() || avv.rank() < 2)
    throw std::invalid_argument("concat_axis1: rank mismatch");
  for (int i = 0; i < avv.rank(); ++i)
    if (i != 1 && avv.dim(i) != bvv.dim(i))
      throw std::invalid_argument("concat_axis1: non-axis dims must match");
  const int64_t N = avv.dim(0);
  int64_t inner = 1;
  for (int i = 2; i < avv.rank(); ++i) inner *= avv.dim(i);
  const int64_t ca = avv.dim(1), cb = bvv.dim(1);
  std::vector<int64_t> oshape = avv.shape();
  oshape[1] = ca + cb;
  Tensor<T> out(oshape);
  for (int64_t n = 0; n < N; ++n) {
    std::copy(avv.data() + n * ca * inner, avv.data() + (n + 1) * ca * inner,
              out.data() + n * (ca + cb) * inner);
    std::copy(bvv.data() + n * cb * inner, bvv.data() + (n + 1) * cb * inner,
              out.data() + n * (ca + cb) * inner + ca * inner);
  }
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_op<T>(std::move(out), {a, b}, [an, bn, N, ca, cb, inner](Node<T>& self) {
    for (int64_t n = 0; n < N; ++n) {
      const T* g = self.grad.data() + n * (ca + cb) * inner;
      if (an->requires_grad)
        detail::vadd_into(an->grad_buf().data() + n * ca * inner, g, ca * inner);
      if (bn->requires_grad)
        detail::vadd_into(bn->grad_buf().data() + n * cb * inner, g + ca * inner,
                          cb * inner);
    }
  });
}

template <typename T>
Var<T> slice_axis1(const Var<T>& x, int64_t start, int64_t len) {
  const auto& xv = x.value();
  if (xv.rank() < 2) throw std::invalid_argument("slice_axis1: rank >= 2 required");
  if (start < 0 || start + len > xv.dim(1))
    throw std::invalid_argument("slice_axis1: out of range");
  const int64_t N = xv.dim(0), C = xv.dim(1);
  int64_t inner = 1;
  for (int i = 2; i < xv.rank(); ++i) inner *= xv.dim(i);
  std::vector<int64_t> oshape = xv.shape();
  oshape[1] = len;
  Tensor<T> out(oshape);
  for (int64_t n = 0; n < N; ++n)
    std::copy(xv.data() + (n * C + start) * inner,
              xv.data() + (n * C + start + len) * inner, out.data() + n * len * inner);
  auto xn = x.node_ptr();
  return make_op<T>(std::move(out), {x}, [xn, N, C, start, len, inner](Node<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& gx = xn->grad_buf();
    for (int64_t n = 0; n < N; ++n)
      detail::vadd_into(gx.data() + (n * C + start) * inner,
                        self.grad.data() + n * len * inner, len * inner);
  });
}

template <typename T>
Var<T> upsample_nearest2d(const Var<T>& x, int64_t s) {
  const auto& xv = x.value();
  if (xv.rank() != 4) throw std::invalid_argument("upsample_nearest2d: rank-4");
  const int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor<T> out({N, C, H * s, W * s});
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = xv.data() + nc * H * W;
    T* dst = out.data() + nc * H * s * W * s;
    for (int64_t i = 0; i < H * s; ++i)
      for (int64_t j = 0; j < W * s; ++j)
        dst[i * W * s + j] = src[(i / s) * W + (j / s)];
  }
  auto xn = x.node_ptr();
  return make_op<T>(std::move(out), {x}, [xn, N, C, H, W, s](Node<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& gx = xn->grad_buf();
    for (int64_t nc = 0; nc < N * C; ++nc) {
      const T* g = self.grad.data() + nc * H * s * W * s;
      T* d = gx.data() + nc * H * W;
      for (int64_t i = 0; i < H * s; ++i)
        for (int64_t j = 0; j < W * s; ++j) d[(i / s) * W + (j / s)] += g[i * W * s + j];
    }
  });
}

template <typename T>
Var<T> upsample_nearest1d(const Var<T>& x, int64_t s) {
  const auto& xv = x.value();
  if (xv.rank() != 3) throw std::invalid_argument("upsample_nearest1d: rank-3");
  const int64_t N = xv.dim(0), C = xv.dim(1), L = xv.dim(2);
  Tensor<T> out({N, C, L * s});
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = xv.data() + nc * L;
    T* dst = out.data() + nc * L * s;
    for (int64_t i = 0; i < L * s; ++i) dst[i] = src[i / s];
  }
  auto xn = x.node_ptr();
  return make_op<T>(std::move(out), {x}, [xn, N, C, L, s](Node<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& gx = xn->grad_buf();
    for (int64_t nc = 0; nc < N * C; ++nc) {
      const T* g = self.grad.data() + nc * L * s;
      T* d = gx.data() + nc * L;
      for (int64_t i = 0; i < L * s; ++i) d[i / s] += g[i];
    }
  });
}

// Mean over all spatial positions: [N, C, ...] -> [N, C].
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const auto& xv = x.value();
  if (xv.rank() < 3) throw std::invalid_argument("global_avg_pool: rank >= 3");
  const int64_t N = xv.dim(0), C = xv.dim(1);
  const int64_t S = xv.numel() / (N * C);
  Tensor<T> out({N, C});
  for (int64_t nc = 0; nc < N * C; ++nc) {
    double s = 0;
    const T* src = xv.data() + nc * S;
    for (int64_t i = 0; i < S; ++i) s += static_cast<double>(src[i]);
    out[nc] = static_cast<T>(s / static_cast<double>(S));
  }
  auto xn = x.node_ptr();
  return make_op<T>(std::move(out), {x}, [xn, N, C, S](Node<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& gx = xn->grad_buf();
    for (int64_t nc = 0; nc < N * C; ++nc) {
      const T g = self.grad[nc] / static_cast<T>(S);
      T* d = gx.data() + nc * S;
      for (int64_t i = 0; i < S; ++i) d[i] += g;
    }
  });
}

// Depth-to-space: [N, 4C, H, W] -> [N, C, 2H, 2W]. Together with a 1x1
// convolution this realizes an exact stride-2 2x2 transposed convolution.
template <typename T>
Var<T> pixel_shuffle2(const Var<T>& x) {
  const auto& xv = x.value();
  if (xv.rank() != 4 || xv.dim(1) % 4 != 0)
    throw std::invalid_argument("pixel_shuffle2: need [N, 4C, H, W]");
  const int64_t N = xv.dim(0), C = xv.dim(1) / 4, H = xv.dim(2), W = xv.dim(3);
  Tensor<T> out({N, C, 2 * H, 2 * W});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t di = 0; di < 2; ++di)
        for (int64_t dj = 0; dj < 2; ++dj) {
          const T* src = xv.data() + (((n * 4 + di * 2 + dj) * C + c) * H) * W;
          for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j)
              out[((n * C + c) * 2 * H + 2 * i + di) * 2 * W + 2 * j + dj] =
                  src[i * W + j];
        }
  auto xn = x.node_ptr();
  return make_op<T>(std::move(out), {x}, [xn, N, C, H, W](Node<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& gx = xn->grad_buf();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t di = 0; di < 2; ++di)
          for (int64_t dj = 0; dj < 2; ++dj) {
            T* dst = gx.data() + (((n * 4 + di * 2 + dj) * C + c) * H) * W;
            for (int64_t i = 0; i < H; ++i)
              for (int64_t j = 0; j < W; ++j)
                dst[i * W + j] +=
                    self.grad[((n * C + c) * 2 * H + 2 * i + di) * 2 * W + 2 * j + dj];
          }
  });
}

// [N, C*f, L] -> [N, C, L*f]; the inverse of a stride-f space-to-channel
// fold, so a 1x1 conv followed by this matches a stride-f transposed conv.
template <typename T>
Var<T> pixel_shuffle1d(const Var<T>& x, int64_t f) {
  const auto& xv = x.value();
  if (f < 1) throw std::invalid_argument("pixel_shuffle1d: factor must be >= 1");
  if (xv.rank() != 3 || xv.dim(1) % f != 0)
    throw std::invalid_argument("pixel_shuffle1d: need [N, C*f, L]");
  const int64_t N = xv.dim(0), C = xv.dim(1) / f, L = xv.dim(2);
  Tensor<T> out({N, C, L * f});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t d = 0; d < f; ++d) {
        const T* src = xv.data() + ((n * f + d) * C + c) * L;
        T* dst = out.data() + (n * C + c) * L * f;
        for (int64_t l = 0; l < L; ++l) dst[l * f + d] = src[l];
      }
  auto xn = x.node_ptr();
  return make_op<T>(std::move(out), {x}, [xn, N, C, L, f](Node<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& gx = xn->grad_buf();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t d = 0; d < f; ++d) {
          T* dst = gx.data() + ((n * f + d) * C + c) * L;
          const T* src = self.grad.data() + (n * C + c) * L * f;
          for (int64_t l = 0; l < L; ++l) dst[l] += src[l * f + d];
        }
  });
}

// [N, C, H, W] -> [N, C, 1, W], averaging over the H axis.
template <typename T>
Var<T> mean_over_height(const Var<T>& x) {
  const auto& xv = x.value();
  if (xv.rank() != 4) throw std::invalid_argument("mean_over_height: rank-4 input");
  const int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor<T> out({N, C, 1, W});
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = xv.data() + nc * H * W;
    T* dst = out.data() + nc * W;
    for (int64_t w = 0; w < W; ++w) {
      double s = 0;
      for (int64_t h = 0; h < H; ++h) s += static_cast<double>(src[h * W + w]);
      dst[w] = static_cast<T>(s / static_cast<double>(H));
    }
  }
  auto xn = x.node_ptr();
  return make_op<T>(std::move(out), {x}, [xn, N, C, H, W](Node<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& gx = xn->grad_buf();
    for (int64_t nc = 0; nc < N * C; ++nc) {
      const T* g = self.grad.data() + nc * W;
      T* d = gx.data() + nc * H * W;
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w) d[h * W + w] += g[w] / static_cast<T>(H);
    }
  });
}

// x[N, C, ...] + b[N, C] broadcast over spatial positions.
template <typename T>
Var<T> add_sample_channel_bias(const Var<T>& x, const Var<T>& b) {
  const auto& xv = x.value();
  const auto& bv = b.value();
  if (bv.rank() != 2 || bv.dim(0) != xv.dim(0) || bv.dim(1) != xv.dim(1))
    throw std::invalid_argument("add_sample_channel_bias: shape mismatch");
  const int64_t NC = xv.dim(0) * xv.dim(1);
  const int64_t S = xv.numel() / NC;
  Tensor<T> out(xv.shape());
  for (int64_t nc = 0; nc < NC; ++nc) {
    const T bb = bv[nc];
    const T* src = xv.data() + nc * S;
    T* dst = out.data() + nc * S;
    for (int64_t i = 0; i < S; ++i) dst[i] = src[i] + bb;
  }
  auto xn = x.node_ptr();
  auto bn = b.node_ptr();
  return make_op<T>(std::move(out), {x, b}, [xn, bn, NC, S](Node<T>& self) {
    if (xn->requires_grad)
      detail::vadd_into(xn->grad_buf().data(), self.grad.data(), self.grad.numel());
    if (bn->requires_grad) {
      Tensor<T>& gb = bn->grad_buf();
      for (int64_t nc = 0; nc < NC; ++nc) {
        double s = 0;
        const T* g = self.grad.data() + nc * S;
        for (int64_t i = 0; i < S; ++i) s += static_cast<double>(g[i]);
        gb[nc] += static_cast<T>(s);
      }
    }
  });
}

// FiLM-style modulation: y = x * (1 + gamma) + xi with gamma, xi [N, C].
template <typename T>
Var<T> scale_shift_channels(const Var<T>& x, const Var<T>& gamma, const Var<T>& xi) {
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& sv = xi.value();
  if (gv.shape() != sv.shape() || gv.rank() != 2 || gv.dim(0) != xv.dim(0) ||
      gv.dim(1) != xv.dim(1))
    throw std::invalid_argument("scale_shift_channels: shape mismatch");
  const int64_t NC = xv.dim(0) * xv.dim(1);
  const int64_t S = xv.numel() / NC;
  Tensor<T> out(xv.shape());
  for (int64_t nc = 0; nc < NC; ++nc) {
    const T g = T(1) + gv[nc];
    const T b = sv[nc];
    const T* src = xv.data() + nc * S;
    T* dst = out.data() + nc * S;
    for (int64_t i = 0; i < S; ++i) dst[i] = src[i] * g + b;
  }
  auto xn = x.node_ptr();
  auto gn = gamma.node_ptr();
  auto sn = xi.node_ptr();
  return make_op<T>(std::move(out), {x, gamma, xi}, [xn, gn, sn, NC, S](Node<T>& self) {
    for (int64_t nc = 0; nc < NC; ++nc) {
      const T* g = self.grad.data() + nc * S;
      if (xn->requires_grad) {
        const T gm = T(1) + gn->value[nc];
        T* d = xn->grad_buf().data() + nc * S;
        for (int64_t i = 0; i < S; ++i) d[i] += g[i] * gm;
      }
      if (gn->requires_grad) {
        double s = 0;
        const T* xv2 = xn->value.data() + nc * S;
        for (int64_t i = 0; i < S; ++i) s += static_cast<double>(g[i]) * xv2[i];
        gn->grad_buf()[nc] += static_cast<T>(s);
      }
      if (sn->requires_grad) {
        double s = 0;
        for (int64_t i = 0; i < S; ++i) s += static_cast<double>(g[i]);
        sn->grad_buf()[nc] += static_cast<T>(s);
      }
    }
  });
}

// Row gather from an embedding table: indices [B*M] -> [B, M, d].
template <typename T>
Var<T> embedding(const Var<T>& table, const std::vector<int64_t>& indices, int64_t B,
                 int64_t M) {
  const auto& tv = table.value();
  if (tv.rank() != 2) throw std::invalid_argument("embedding: rank-2 table");
  if (static_cast<int64_t>(indices.size()) != B * M)
    throw std::invalid_argument("embedding: index count mismatch");
  const int64_t V = tv.dim(0), d = tv.dim(1);
  for (int64_t idx : indices)
    if (idx < 0 || idx >= V) throw std::invalid_argument("embedding: index out of range");
  Tensor<T> out({B, M, d});
  for (int64_t i = 0; i < B * M; ++i)
    std::copy(tv.data() + indices[i] * d, tv.data() + (indices[i] + 1) * d,
              out.data() + i * d);
  auto tn = table.node_ptr();
  return make_op<T>(std::move(out), {table}, [tn, indices, d](Node<T>& self) {
    if (!tn->requires_grad) return;
    Tensor<T>& gt = tn->grad_buf();
    for (std::size_t i = 0; i < indices.size(); ++i)
      detail::vadd_into(gt.data() + indices[i] * d,
                        self.grad.data() + static_cast<int64_t>(i) * d, d);
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  double s = 0;
  for (int64_t i = 0; i < x.value().numel(); ++i) s += static_cast<double>(x.value()[i]);
  auto xn = x.node_ptr();
  return make_op<T>(Tensor<T>::scalar(static_cast<T>(s)), {x}, [xn](Node<T>& self) {
    if (!xn->requires_grad) return;
    Tensor<T>& g = xn->grad_buf();
    const T go = self.grad[0];
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += go;
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
  const int64_t n = x.value().numel();
  return mul_scalar(sum_all(x), T(1) / static_cast<T>(n));
}

template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Var<T>& target) {
  if (pred.value().shape() != target.value().shape())
    throw std::invalid_argument("mse_loss: shape mismatch");
  const int64_t n = pred.value().numel();
  double s = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pred.value()[i]) - target.value()[i];
    s += d * d;
  }
  auto pn = pred.node_ptr();
  auto tn = target.node_ptr();
  return make_op<T>(Tensor<T>::scalar(static_cast<T>(s / n)), {pred, target},
                    [pn, tn, n](Node<T>& self) {
    const T go = self.grad[0] * T(2) / static_cast<T>(n);
    if (pn->requires_grad) {
      Tensor<T>& g = pn->grad_buf();
      for (int64_t i = 0; i < n; ++i) g[i] += go * (pn->value[i] - tn->value[i]);
    }
    if (tn->requires_grad) {
      Tensor<T>& g = tn->grad_buf();
      for (int64_t i = 0; i < n; ++i) g[i] -= go * (pn->value[i] - tn->value[i]);
    }
  });
}

template <typename T>
Var<T> l1_loss(const Var<T>& pred, const Var<T>& target) {
  if (pred.value().shape() != target.value().shape())
    throw std::invalid_argument("l1_loss: shape mismatch");
  const int64_t n = pred.value().numel();
  double s = 0;
  for (int64_t i = 0; i < n; ++i)
    s += std::abs(static_cast<double>(pred.value()[i]) - target.value()[i]);
  auto pn = pred.node_ptr();
  auto tn = target.node_ptr();
  return make_op<T>(Tensor<T>::scalar(static_cast<T>(s / n)), {pred, target},
                    [pn, tn, n](Node<T>& self) {
    const T go = self.grad[0] / static_cast<T>(n);
    if (pn->requires_grad) {
      Tensor<T>& g = pn->grad_buf();
      for (int64_t i = 0; i < n; ++i) {
        const T d = pn->value[i] - tn->value[i];
        g[i] += go * (d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)));
      }
    }
  });
}

// Mean cross entropy over logits [N, K] with integer labels.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int64_t>& labels) {
  const auto& lv = logits.value();
  if (lv.rank() != 2) throw std::invalid_argument("cross_entropy: rank-2 logits");
  const int64_t N = lv.dim(0), K = lv.dim(1);
  if (static_cast<int64_t>(labels.size()) != N)
    throw std::invalid_argument("cross_entropy: label count mismatch");
  Tensor<T> probs({N, K});
  double loss = 0;
  for (int64_t i = 0; i < N; ++i) {
    const T* row = lv.data() + i * K;
    T mx = row[0];
    for (int64_t k = 1; k < K; ++k) mx = row[k] > mx ? row[k] : mx;
    double sum = 0;
    for (int64_t k = 0; k < K; ++k) {
      const double e = std::exp(static_cast<double>(row[k] - mx));
      probs.at(i, k) = static_cast<T>(e);
      sum += e;
    }
    for (int64_t k = 0; k < K; ++k) probs.at(i, k) = static_cast<T>(probs.at(i, k) / sum);
    loss -= std::log(std::max(static_cast<double>(probs.at(i, labels[i])), 1e-30));
  }
  auto ln = logits.node_ptr();
  return make_op<T>(Tensor<T>::scalar(static_cast<T>(loss / N)), {logits},
                    [ln, labels, probs, N, K](Node<T>& self) {
    if (!ln->requires_grad) return;
    Tensor<T>& g = ln->grad_buf();
    const T go = self.grad[0] / static_cast<T>(N);
    for (int64_t i = 0; i < N; ++i)
      for (int64_t k = 0; k < K; ++k)
        g.at(i, k) += go * (probs.at(i, k) - (labels[i] == k ? T(1) : T(0)));
  });
}

}  // namespace mst::ag
