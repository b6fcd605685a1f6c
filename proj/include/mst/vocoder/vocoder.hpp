// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0
//
// Diffusion vocoder. A small conv encoder squeezes the spectrogram into a
// tanh-bounded code with one token per hop of audio; a 1-D U-Net denoises
// raw waveforms conditioned on that code through cross-attention and on
// the noise level through feature-wise modulation.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mst/backbone/film.hpp"
#include "mst/cond/conditioning.hpp"
#include "mst/core/autograd.hpp"
#include "mst/core/nn.hpp"
#include "mst/core/rng.hpp"
#include "mst/diffusion/sampler.hpp"
#include "mst/diffusion/schedule.hpp"
#include "mst/dsp/stft.hpp"

namespace mst::vocoder {

namespace ag = mst::ag;

struct VocoderConfig {
  // One width per rate level, top (sample rate) first; the last entry is
  // the bottleneck where cross-attention runs.
  std::vector<int64_t> widths = {16, 24, 32, 32};
  // Per-stage upsampling factors; their product must equal the STFT hop.
  std::vector<int64_t> up_factors = {4, 5, 5};
  int64_t latent_channels = 16;
  int64_t encoder_width = 16;
  int64_t T = 50;
  double beta_start = 1e-4;
  double beta_end = 0.7;
  int64_t inference_steps = 50;

  int64_t hop() const {
    int64_t p = 1;
    for (int64_t f : up_factors) p *= f;
    return p;
  }

  void validate() const {
    if (up_factors.empty()) throw std::invalid_argument("vocoder: no stages");
    for (int64_t f : up_factors)
      if (f < 2) throw std::invalid_argument("vocoder: factors must be >= 2");
    if (widths.size() != up_factors.size() + 1)
      throw std::invalid_argument("vocoder: need one width per rate level");
    for (int64_t w : widths)
      if (w < 1) throw std::invalid_argument("vocoder: widths must be positive");
    if (latent_channels < 1 || encoder_width < 1)
      throw std::invalid_argument("vocoder: channel counts must be positive");
    if (T < 1) throw std::invalid_argument("vocoder: T must be >= 1");
    if (!(beta_start > 0 && beta_end < 1 && beta_start <= beta_end))
      throw std::invalid_argument("vocoder: betas must satisfy 0 < start <= end < 1");
    if (inference_steps < 1 || inference_steps > T)
      throw std::invalid_argument("vocoder: inference steps out of range");
  }

  diffusion::NoiseSchedule schedule() const {
    return diffusion::make_schedule(T, beta_start, beta_end,
                                    diffusion::BetaShape::linear);
  }

  static VocoderConfig toy() {
    VocoderConfig c;
    c.widths = {8, 12, 16, 16};
    c.latent_channels = 8;
    c.encoder_width = 8;
    return c;
  }
};

// Plain two-conv residual block; the noise level enters through the
// modulation blocks outside, not here.
template <typename T>
struct Res1d {
  nn::GroupNorm<T> gn1, gn2;
  nn::Conv1d<T> c1, c2, skip;
  bool projects = false;

  Res1d() = default;
  Res1d(nn::ParamStore<T>& ps, const std::string& name, int64_t cin, int64_t cout,
        Rng& rng)
      : gn1(ps, name + ".gn1", cin, nn::pick_groups(cin)),
        gn2(ps, name + ".gn2", cout, nn::pick_groups(cout)),
        c1(ps, name + ".c1", cin, cout, 3, 1, 1, rng),
        c2(ps, name + ".c2", cout, cout, 3, 1, 1, rng),
        projects(cin != cout) {
    if (projects) skip = nn::Conv1d<T>(ps, name + ".skip", cin, cout, 1, 1, 0, rng);
  }

  ag::Var<T> operator()(const ag::Var<T>& x) const {
    ag::Var<T> h = c1(ag::silu(gn1(x)));
    h = c2(ag::silu(gn2(h)));
    return ag::add(h, projects ? skip(x) : x);
  }
};

template <typename T>
class Vocoder {
 public:
  Vocoder(nn::ParamStore<T>& ps, const std::string& name, const VocoderConfig& cfg,
          Rng& rng)
      : cfg_(cfg) {
    cfg_.validate();
    const int64_t we = cfg_.encoder_width;
    const int64_t cl = cfg_.latent_channels;
    enc_w1_ = ps.add(name + ".enc.w1",
                     nn::detail::init_tensor<T>({we, 1, 3, 3}, 9, nn::Init::he, rng));
    enc_b1_ = ps.add(name + ".enc.b1", Tensor<T>({we}));
    enc_w2_ = ps.add(name + ".enc.w2", nn::detail::init_tensor<T>(
                                           {we, we, 3, 3}, we * 9, nn::Init::he, rng));
    enc_b2_ = ps.add(name + ".enc.b2", Tensor<T>({we}));
    enc_w3_ = ps.add(name + ".enc.w3", nn::detail::init_tensor<T>(
                                           {cl, we, 3, 3}, we * 9, nn::Init::he, rng));
    enc_b3_ = ps.add(name + ".enc.b3", Tensor<T>({cl}));

    const auto& w = cfg_.widths;
    const std::size_t F = cfg_.up_factors.size();
    conv_in_ = nn::Conv1d<T>(ps, name + ".in", 1, w[0], 3, 1, 1, rng);
    for (std::size_t i = 0; i < F; ++i) {
      const std::string st = name + ".down" + std::to_string(i);
      const int64_t f = cfg_.up_factors[i];
      down_res_.emplace_back(ps, st + ".res", w[i], w[i], rng);
      down_film_.emplace_back(ps, st + ".film", w[i], rng);
      down_conv_.emplace_back(ps, st + ".conv", w[i], w[i + 1], 2 * f - 1, f, f - 1,
                              rng);
    }
    const int64_t wb = w[F];
    mid_res1_ = Res1d<T>(ps, name + ".mid.res1", wb, wb, rng);
    mid_film1_ = backbone::FilmBlock<T>(ps, name + ".mid.film1", wb, rng);
    attn_gn_ = nn::GroupNorm<T>(ps, name + ".mid.attn_gn", wb, nn::pick_groups(wb));
    attn_w_ = cond::AttentionWeights<T>(ps, name + ".mid.attn", wb, cl, wb, rng);
    attn_out_ = nn::Linear<T>(ps, name + ".mid.attn_out", wb, wb, rng, true,
                              nn::Init::zero);
    mid_res2_ = Res1d<T>(ps, name + ".mid.res2", wb, wb, rng);
    mid_film2_ = backbone::FilmBlock<T>(ps, name + ".mid.film2", wb, rng);
    for (std::size_t i = F; i-- > 0;) {
      const std::string st = name + ".up" + std::to_string(i);
      const int64_t f = cfg_.up_factors[i];
      up_conv_.emplace_back(ps, st + ".conv", w[i + 1], w[i] * f, 3, 1, 1, rng);
      up_res_.emplace_back(ps, st + ".res", 2 * w[i], w[i], rng);
      up_film_.emplace_back(ps, st + ".film", w[i], rng);
    }
    gn_out_ = nn::GroupNorm<T>(ps, name + ".gn_out", w[0], nn::pick_groups(w[0]));
    conv_out_ = nn::Conv1d<T>(ps, name + ".out", w[0], 1, 3, 1, 1, rng, true,
                              nn::Init::zero);
  }

  const VocoderConfig& config() const { return cfg_; }

  // Spectrogram to conditioning code [1, frames, latent_channels], one
  // token per hop of audio, every entry in [-1, 1].
  ag::Var<T> encode_spectrogram(const dsp::Spectrogram& m) const {
    if (m.params.hop != cfg_.hop())
      throw std::invalid_argument(
          "encode_spectrogram: hop does not match the upsampling factors");
    if (m.bins() < 1 || m.frames() < 1)
      throw std::invalid_argument("encode_spectrogram: empty spectrogram");
    Tensor<T> img({1, 1, m.bins(), m.frames()});
    for (int64_t i = 0; i < m.magnitude.numel(); ++i)
      img[i] = static_cast<T>(m.magnitude[i]);
    ag::Var<T> h = ag::Var<T>::constant(std::move(img));
    h = ag::silu(ag::conv2d_hw(h, enc_w1_, enc_b1_, 2, 1, 1, 1));
    h = ag::silu(ag::conv2d_hw(h, enc_w2_, enc_b2_, 2, 1, 1, 1));
    h = ag::conv2d_hw(h, enc_w3_, enc_b3_, 2, 1, 1, 1);
    h = ag::flatten_tokens(ag::mean_over_height(h));
    return ag::tanh_op(h);
  }

  // One denoising evaluation: noisy audio [B, 1, L], conditioning code
  // [B, L / hop, latent_channels], noise level sqrt(alpha_bar) in (0, 1].
  ag::Var<T> denoise(const ag::Var<T>& y, const ag::Var<T>& code,
                     double level) const {
    const auto& yv = y.value();
    if (yv.rank() != 3 || yv.dim(1) != 1)
      throw std::invalid_argument("denoise: audio must be [B, 1, L]");
    const int64_t B = yv.dim(0), L = yv.dim(2);
    if (L < 1 || L % cfg_.hop() != 0)
      throw std::invalid_argument("denoise: length must be a multiple of the hop");
    const auto& cv = code.value();
    if (cv.rank() != 3 || cv.dim(0) != B || cv.dim(1) != L / cfg_.hop() ||
        cv.dim(2) != cfg_.latent_channels)
      throw std::invalid_argument("denoise: conditioning code misaligned");
    if (!(level > 0.0 && level <= 1.0))
      throw std::domain_error("denoise: noise level must be in (0, 1]");

    ag::Var<T> h = conv_in_(y);
    std::vector<ag::Var<T>> skips;
    for (std::size_t i = 0; i < down_res_.size(); ++i) {
      h = down_film_[i](down_res_[i](h), level);
      skips.push_back(h);
      h = down_conv_[i](h);
    }
    h = mid_film1_(mid_res1_(h), level);
    {
      const int64_t Lb = h.value().dim(2);
      ag::Var<T> t = ag::flatten_tokens(
          ag::reshape(attn_gn_(h), {B, h.value().dim(1), Lb, int64_t{1}}));
      ag::Var<T> a = attn_out_(cond::cross_attention(t, code, attn_w_));
      a = ag::reshape(ag::unflatten_tokens(a, Lb, 1), h.value().shape());
      h = ag::add(h, a);
    }
    h = mid_film2_(mid_res2_(h), level);
    for (std::size_t i = 0; i < up_conv_.size(); ++i) {
      const std::size_t stage = up_conv_.size() - 1 - i;
      h = ag::pixel_shuffle1d(up_conv_[i](h), cfg_.up_factors[stage]);
      h = ag::concat_axis1(h, skips[stage]);
      h = up_film_[i](up_res_[i](h), level);
    }
    return conv_out_(ag::silu(gn_out_(h)));
  }

  // Reverse diffusion over raw audio conditioned on the spectrogram.
  // Deterministic for a fixed seed; output clipped to [-1, 1].
  dsp::Waveform synthesize(const dsp::Spectrogram& m, int64_t steps,
                           uint64_t seed) const {
    if (steps < 1 || steps > cfg_.T)
      throw std::invalid_argument("synthesize: steps out of range");
    if (!trained_head())
      throw std::runtime_error(
          "synthesize: vocoder output head is all zero; train or load a "
          "checkpoint first");
    ag::NoGradGuard ng;
    ag::Var<T> code = encode_spectrogram(m);
    const int64_t hop = cfg_.hop();
    const int64_t want = m.length > 0 ? m.length : (m.frames() - 1) * hop;
    const int64_t L = want / hop * hop;
    if (L < hop) throw std::invalid_argument("synthesize: clip too short");
    const int64_t M = L / hop;
    if (M > code.value().dim(1))
      throw std::invalid_argument("synthesize: spectrogram shorter than target");
    code = ag::slice_axis1(code, 0, M);

    const diffusion::NoiseSchedule sched = cfg_.schedule();
    const std::vector<int64_t> ts = diffusion::stride_timesteps(cfg_.T, steps);
    Rng rng(seed);
    Tensor<T> z({1, 1, L});
    for (int64_t i = 0; i < L; ++i) z[i] = static_cast<T>(rng.normal());
    for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
      const int64_t a = ts[k], b = ts[k + 1];
      const double level = std::sqrt(sched.alpha_bar(a));
      Tensor<T> eps_hat = denoise(ag::Var<T>::constant(z), code, level).value();
      if (b == 0) {
        z = diffusion::reverse_hop<T>(z, a, b, eps_hat, nullptr, sched);
      } else {
        Tensor<T> noise({1, 1, L});
        for (int64_t i = 0; i < L; ++i) noise[i] = static_cast<T>(rng.normal());
        z = diffusion::reverse_hop<T>(z, a, b, eps_hat, &noise, sched);
      }
    }
    dsp::Waveform out;
    out.sample_rate = m.sample_rate;
    out.samples.resize(static_cast<std::size_t>(L));
    for (int64_t i = 0; i < L; ++i)
      out.samples[static_cast<std::size_t>(i)] =
          std::min(1.0, std::max(-1.0, static_cast<double>(z[i])));
    return out;
  }

 private:
  // Fresh models have a zero output head and would synthesize from an
  // identically zero noise prediction; refuse to pass that off as audio.
  bool trained_head() const {
    const auto& w = conv_out_.w.value();
    for (int64_t i = 0; i < w.numel(); ++i)
      if (w[i] != T(0)) return true;
    return false;
  }

  VocoderConfig cfg_;
  ag::Var<T> enc_w1_, enc_b1_, enc_w2_, enc_b2_, enc_w3_, enc_b3_;
  nn::Conv1d<T> conv_in_;
  std::vector<Res1d<T>> down_res_;
  std::vector<backbone::FilmBlock<T>> down_film_;
  std::vector<nn::Conv1d<T>> down_conv_;
  Res1d<T> mid_res1_, mid_res2_;
  backbone::FilmBlock<T> mid_film1_, mid_film2_;
  nn::GroupNorm<T> attn_gn_;
  cond::AttentionWeights<T> attn_w_;
  nn::Linear<T> attn_out_;
  std::vector<nn::Conv1d<T>> up_conv_;
  std::vector<Res1d<T>> up_res_;
  std::vector<backbone::FilmBlock<T>> up_film_;
  nn::GroupNorm<T> gn_out_;
  nn::Conv1d<T> conv_out_;
};

// Mean absolute error between the true and predicted noise at step n,
// with the noisy input built from the closed-form forward marginal.
template <typename T>
ag::Var<T> vocoder_loss(const Vocoder<T>& voc, const Tensor<T>& y0,
                        const Tensor<T>& eps, const ag::Var<T>& code, int64_t n,
                        const diffusion::NoiseSchedule& sched) {
  if (y0.shape() != eps.shape())
    throw std::invalid_argument("vocoder_loss: eps shape mismatch");
  Tensor<T> y_n = diffusion::forward_sample<T>(y0, n, eps, sched);
  const double level = std::sqrt(sched.alpha_bar(n));
  ag::Var<T> eps_hat = voc.denoise(ag::Var<T>::constant(std::move(y_n)), code, level);
  return ag::l1_loss(eps_hat, ag::Var<T>::constant(eps));
}

}  // namespace mst::vocoder
