// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MST_COND_CONDITIONING_HPP_
#define MST_COND_CONDITIONING_HPP_

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mst/cond/vocabulary.hpp"
#include "mst/core/autograd.hpp"
#include "mst/core/nn.hpp"
#include "mst/core/rng.hpp"
#include "mst/dsp/stft.hpp"

namespace mst::cond {

namespace ag = mst::ag;

// A style target: label ids (at most one per axis) and/or a reference
// spectrogram. At least one of the two must be present.
struct StyleCondition {
  std::vector<int64_t> labels;
  const dsp::Spectrogram* reference = nullptr;
};

void inline validate_condition(const StyleCondition& c, const Vocabulary& vocab) {
  if (c.labels.empty() && c.reference == nullptr)
    throw std::invalid_argument("condition: need a label or a reference");
  for (int64_t id : c.labels)
    if (id < 0 || id >= vocab.size())
      throw std::out_of_range("condition: label id not in vocabulary");
  for (std::size_t i = 0; i < c.labels.size(); ++i)
    for (std::size_t j = i + 1; j < c.labels.size(); ++j)
      if (vocab.axis(c.labels[i]) == vocab.axis(c.labels[j]))
        throw std::invalid_argument("condition: two labels on one axis");
  if (c.reference != nullptr && c.reference->magnitude.numel() == 0)
    throw std::invalid_argument("condition: empty reference spectrogram");
}

// Encoded style context, one row per token.
template <typename T>
struct ConditionTokens {
  ag::Var<T> tokens;  // [M, d_tau] or [B, M, d_tau]

  int64_t count() const {
    const auto& v = tokens.value();
    return v.dim(v.rank() - 2);
  }
  int64_t dim() const {
    const auto& v = tokens.value();
    return v.dim(v.rank() - 1);
  }
};

// Projections for one attention site. Stored input-major, so the query
// projection maps [*, d_eps] -> [*, d] by right multiplication.
template <typename T>
struct AttentionWeights {
  ag::Var<T> wq;  // [d_eps, d]
  ag::Var<T> wk;  // [d_tau, d]
  ag::Var<T> wv;  // [d_tau, d]

  AttentionWeights() = default;
  AttentionWeights(nn::ParamStore<T>& ps, const std::string& name, int64_t d_eps,
                   int64_t d_tau, int64_t d, Rng& rng) {
    wq = ps.add(name + ".wq", nn::detail::init_tensor<T>({d_eps, d}, d_eps,
                                                         nn::Init::xavier, rng));
    wk = ps.add(name + ".wk", nn::detail::init_tensor<T>({d_tau, d}, d_tau,
                                                         nn::Init::xavier, rng));
    wv = ps.add(name + ".wv", nn::detail::init_tensor<T>({d_tau, d}, d_tau,
                                                         nn::Init::xavier, rng));
  }
};

// Scaled dot-product attention of query features over context tokens.
// phi: [N, d_eps] with ctx [M, d_tau], or batched [B, N, d_eps] with
// ctx [B, M, d_tau]. Output: [N, d] or [B, N, d].
template <typename T>
ag::Var<T> cross_attention(const ag::Var<T>& phi, const ag::Var<T>& ctx,
                           const AttentionWeights<T>& w) {
  const auto& pv = phi.value();
  const auto& cv = ctx.value();
  if (pv.rank() != cv.rank() || (pv.rank() != 2 && pv.rank() != 3))
    throw std::invalid_argument("cross_attention: rank-2 or rank-3 inputs");
  if (pv.dim(pv.rank() - 1) != w.wq.value().dim(0))
    throw std::invalid_argument("cross_attention: query feature dim mismatch");
  if (cv.dim(cv.rank() - 1) != w.wk.value().dim(0))
    throw std::invalid_argument("cross_attention: context token dim mismatch");
  if (w.wq.value().dim(1) != w.wk.value().dim(1))
    throw std::invalid_argument("cross_attention: Q/K inner dim mismatch");
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(w.wq.value().dim(1))));
  if (pv.rank() == 2) {
    ag::Var<T> q = ag::matmul(phi, w.wq);
    ag::Var<T> k = ag::matmul(ctx, w.wk);
    ag::Var<T> v = ag::matmul(ctx, w.wv);
    ag::Var<T> attn = ag::softmax_lastdim(ag::mul_scalar(ag::matmul(q, k, false, true), scale));
    return ag::matmul(attn, v);
  }
  if (pv.dim(0) != cv.dim(0))
    throw std::invalid_argument("cross_attention: batch mismatch");
  const int64_t B = pv.dim(0), N = pv.dim(1), M = cv.dim(1);
  const int64_t d = w.wq.value().dim(1);
  auto project = [&](const ag::Var<T>& x, const ag::Var<T>& pw, int64_t rows) {
    ag::Var<T> flat = ag::reshape(x, {B * rows, x.value().dim(2)});
    return ag::reshape(ag::matmul(flat, pw), {B, rows, d});
  };
  ag::Var<T> q = project(phi, w.wq, N);
  ag::Var<T> k = project(ctx, w.wk, M);
  ag::Var<T> v = project(ctx, w.wv, M);
  ag::Var<T> attn = ag::softmax_lastdim(ag::mul_scalar(ag::bmm(q, k, false, true), scale));
  return ag::bmm(attn, v);
}

// Squared-error objective for a conditional noise prediction. Gradients flow
// through eps_hat into both the denoiser and the condition encoder.
template <typename T>
ag::Var<T> conditional_loss(const ag::Var<T>& eps_hat, const ag::Var<T>& eps) {
  return ag::mse_loss(eps_hat, eps);
}

// Replaces whole token rows: samples flagged in dropped get every token set
// to null_row. Gradients route to ctx for kept samples and accumulate into
// null_row for dropped ones.
template <typename T>
ag::Var<T> substitute_tokens(const ag::Var<T>& ctx, const ag::Var<T>& null_row,
                             const std::vector<char>& dropped) {
  const auto& cv = ctx.value();
  const auto& nv = null_row.value();
  if (cv.rank() != 3) throw std::invalid_argument("substitute_tokens: ctx rank-3");
  if (nv.numel() != cv.dim(2))
    throw std::invalid_argument("substitute_tokens: null row width mismatch");
  if (static_cast<int64_t>(dropped.size()) != cv.dim(0))
    throw std::invalid_argument("substitute_tokens: flag count mismatch");
  const int64_t B = cv.dim(0), M = cv.dim(1), d = cv.dim(2);
  Tensor<T> out(cv.shape());
  for (int64_t b = 0; b < B; ++b) {
    T* dst = out.data() + b * M * d;
    if (dropped[static_cast<std::size_t>(b)]) {
      for (int64_t m = 0; m < M; ++m)
        std::copy(nv.data(), nv.data() + d, dst + m * d);
    } else {
      std::copy(cv.data() + b * M * d, cv.data() + (b + 1) * M * d, dst);
    }
  }
  auto cn = ctx.node_ptr();
  auto nn_ = null_row.node_ptr();
  return ag::make_op<T>(std::move(out), {ctx, null_row},
                        [cn, nn_, dropped, B, M, d](ag::Node<T>& self) {
                          for (int64_t b = 0; b < B; ++b) {
                            const T* g = self.grad.data() + b * M * d;
                            if (dropped[static_cast<std::size_t>(b)]) {
                              if (!nn_->requires_grad) continue;
                              T* ng = nn_->grad_buf().data();
                              for (int64_t m = 0; m < M; ++m)
                                for (int64_t j = 0; j < d; ++j) ng[j] += g[m * d + j];
                            } else if (cn->requires_grad) {
                              T* cg = cn->grad_buf().data() + b * M * d;
                              for (int64_t i = 0; i < M * d; ++i) cg[i] += g[i];
                            }
                          }
                        });
}

// Training-time condition dropout: each sample's tokens are replaced by the
// learned null row with probability drop_p.
template <typename T>
ag::Var<T> dropout_condition(const ag::Var<T>& ctx, const ag::Var<T>& null_row,
                             Rng& rng, double drop_p) {
  std::vector<char> dropped(static_cast<std::size_t>(ctx.value().dim(0)));
  for (auto& f : dropped) f = rng.uniform() < drop_p ? 1 : 0;
  return substitute_tokens(ctx, null_row, dropped);
}

// Maps a style condition to context tokens: one learned embedding row per
// label, plus one token per pooled time region of the reference spectrogram.
template <typename T>
class ConditionEncoder {
 public:
  struct Config {
    int64_t d_tau = 64;
    int64_t ref_channels = 16;
  };

  ConditionEncoder() = default;
  ConditionEncoder(nn::ParamStore<T>& ps, const std::string& name,
                   const Vocabulary& vocab, Config cfg, Rng& rng)
      : vocab_(&vocab),
        cfg_(cfg),
        table_(ps, name + ".labels", vocab.size(), cfg.d_tau, rng),
        rc1_(ps, name + ".ref1", 1, cfg.ref_channels, 3, 2, 1, rng),
        rc2_(ps, name + ".ref2", cfg.ref_channels, 2 * cfg.ref_channels, 3, 2, 1, rng),
        rc3_(ps, name + ".ref3", 2 * cfg.ref_channels, cfg.d_tau, 3, 2, 1, rng) {}

  int64_t d_tau() const { return cfg_.d_tau; }

  ConditionTokens<T> encode(const StyleCondition& c) const {
    validate_condition(c, *vocab_);
    ag::Var<T> toks;
    bool have = false;
    if (!c.labels.empty()) {
      toks = table_(c.labels, 1, static_cast<int64_t>(c.labels.size()));
      have = true;
    }
    if (c.reference != nullptr) {
      ag::Var<T> ref = encode_reference(*c.reference);
      toks = have ? ag::concat_axis1(toks, ref) : ref;
    }
    const auto& v = toks.value();
    return {ag::reshape(toks, {v.dim(1), v.dim(2)})};
  }

  // Label-only batch: ids is B x n row-major, one row per sample.
  ConditionTokens<T> encode_batch(const std::vector<int64_t>& ids, int64_t B,
                                  int64_t n) const {
    for (int64_t id : ids)
      if (id < 0 || id >= vocab_->size())
        throw std::out_of_range("condition: label id not in vocabulary");
    return {table_(ids, B, n)};
  }

 private:
  ag::Var<T> encode_reference(const dsp::Spectrogram& s) const {
    Tensor<T> x({1, 1, s.bins(), s.frames()});
    for (int64_t i = 0; i < x.numel(); ++i)
      x[i] = static_cast<T>(s.magnitude[i]);
    ag::Var<T> h = ag::Var<T>::constant(std::move(x));
    h = ag::silu(rc1_(h));
    h = ag::silu(rc2_(h));
    h = rc3_(h);
    h = ag::mean_over_height(h);  // [1, d_tau, 1, W']
    return ag::flatten_tokens(h);  // [1, W', d_tau]
  }

  const Vocabulary* vocab_ = nullptr;
  Config cfg_;
  nn::Embedding<T> table_;
  nn::Conv2d<T> rc1_, rc2_, rc3_;
};

}  // namespace mst::cond

#endif  // MST_COND_CONDITIONING_HPP_
