// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MST_BACKBONE_UNET_HPP_
#define MST_BACKBONE_UNET_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mst/cond/conditioning.hpp"
#include "mst/core/autograd.hpp"
#include "mst/core/nn.hpp"
#include "mst/core/rng.hpp"

namespace mst::backbone {

namespace ag = mst::ag;

using nn::pick_groups;

struct UNetConfig {
  int64_t in_channels = 4;
  std::vector<int64_t> widths = {32, 64, 128};
  int64_t num_layers = 1;
  // Stages whose min(H, W) is listed here get self plus cross attention.
  std::vector<int64_t> attention_resolutions;
  int64_t t_dim = 64;
  int64_t d_tau = 64;
  // Spatial size the network is built for; fixes where attention lives.
  int64_t latent_h = 64;
  int64_t latent_w = 64;

  int64_t stages() const { return static_cast<int64_t>(widths.size()); }

  // min(H, W) at each stage of the downsampling ladder.
  std::vector<int64_t> resolution_ladder() const {
    std::vector<int64_t> out;
    for (int64_t s = 0; s < stages(); ++s)
      out.push_back(std::min(latent_h >> s, latent_w >> s));
    return out;
  }

  bool attention_at(int64_t stage) const {
    const int64_t r = std::min(latent_h >> stage, latent_w >> stage);
    return std::find(attention_resolutions.begin(), attention_resolutions.end(),
                     r) != attention_resolutions.end();
  }

  void validate() const {
    if (widths.empty()) throw std::invalid_argument("unet: no stage widths");
    for (int64_t w : widths)
      if (w <= 0) throw std::invalid_argument("unet: widths must be positive");
    if (num_layers < 1) throw std::invalid_argument("unet: num_layers >= 1");
    if (t_dim < 2 || t_dim % 2 != 0)
      throw std::invalid_argument("unet: t_dim must be even, >= 2");
    if (d_tau < 1 || in_channels < 1)
      throw std::invalid_argument("unet: bad channel config");
    const int64_t div = int64_t(1) << (stages() - 1);
    if (latent_h <= 0 || latent_w <= 0 || latent_h % div != 0 || latent_w % div != 0)
      throw std::invalid_argument("unet: latent dims must divide the ladder");
    const auto ladder = resolution_ladder();
    for (int64_t r : attention_resolutions)
      if (std::find(ladder.begin(), ladder.end(), r) == ladder.end())
        throw std::invalid_argument(
            "unet: attention resolution not in the resolution ladder");
  }

  static UNetConfig toy(int64_t latent_h = 64, int64_t latent_w = 64) {
    UNetConfig c;
    c.in_channels = 4;
    c.widths = {32, 64, 128};
    c.num_layers = 1;
    c.t_dim = 64;
    c.d_tau = 64;
    c.latent_h = latent_h;
    c.latent_w = latent_w;
    const int64_t m = std::min(latent_h, latent_w);
    c.attention_resolutions = {m >> 1, m >> 2};
    c.validate();
    return c;
  }

  static UNetConfig paper() {
    UNetConfig c;
    c.in_channels = 4;
    c.widths = {512, 512, 512, 256, 128};
    c.num_layers = 2;
    c.t_dim = 512;
    c.d_tau = 512;
    c.latent_h = 64;
    c.latent_w = 64;
    c.attention_resolutions = {16, 8, 4};
    c.validate();
    return c;
  }
};

// Sinusoidal features of a nonnegative step index: dim/2 sines then dim/2
// cosines, frequencies geometric from 1 down to 1/10000.
template <typename T>
Tensor<T> sinusoidal_time(double t, int64_t dim) {
  if (t < 0) throw std::domain_error("timestep embedding: t >= 0 required");
  if (dim < 2 || dim % 2 != 0)
    throw std::invalid_argument("timestep embedding: dim must be even");
  const int64_t half = dim / 2;
  Tensor<T> out({dim});
  for (int64_t k = 0; k < half; ++k) {
    const double w =
        half > 1 ? std::pow(10000.0, -static_cast<double>(k) /
                                         static_cast<double>(half - 1))
                 : 1.0;
    out[k] = static_cast<T>(std::sin(t * w));
    out[half + k] = static_cast<T>(std::cos(t * w));
  }
  return out;
}

// Learned map on top of the sinusoidal features: two linear layers.
template <typename T>
class TimestepEmbed {
 public:
  TimestepEmbed() = default;
  TimestepEmbed(nn::ParamStore<T>& ps, const std::string& name, int64_t dim,
                Rng& rng)
      : dim_(dim),
        l1_(ps, name + ".l1", dim, dim, rng),
        l2_(ps, name + ".l2", dim, dim, rng) {
    if (dim < 2 || dim % 2 != 0)
      throw std::invalid_argument("timestep embedding: dim must be even");
  }

  // One embedding row per timestep: [B, dim].
  ag::Var<T> operator()(const std::vector<int64_t>& ts) const {
    const int64_t B = static_cast<int64_t>(ts.size());
    Tensor<T> feats({B, dim_});
    for (int64_t b = 0; b < B; ++b) {
      Tensor<T> row = sinusoidal_time<T>(static_cast<double>(ts[b]), dim_);
      std::copy(row.data(), row.data() + dim_, feats.data() + b * dim_);
    }
    return l2_(ag::silu(l1_(ag::Var<T>::constant(std::move(feats)))));
  }

  ag::Var<T> operator()(int64_t t) const { return (*this)(std::vector<int64_t>{t}); }

  int64_t dim() const { return dim_; }

 private:
  int64_t dim_ = 0;
  nn::Linear<T> l1_, l2_;
};

// Two 3x3 convolutions with group norms; the timestep embedding enters as a
// per-channel bias after the first convolution.
template <typename T>
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(nn::ParamStore<T>& ps, const std::string& name, int64_t cin,
           int64_t cout, int64_t t_dim, Rng& rng)
      : gn1_(ps, name + ".gn1", cin, pick_groups(cin)),
        c1_(ps, name + ".c1", cin, cout, 3, 1, 1, rng),
        temb_(ps, name + ".temb", t_dim, cout, rng),
        gn2_(ps, name + ".gn2", cout, pick_groups(cout)),
        c2_(ps, name + ".c2", cout, cout, 3, 1, 1, rng),
        projects_(cin != cout) {
    if (projects_) skip_ = nn::Conv2d<T>(ps, name + ".skip", cin, cout, 1, 1, 0, rng);
  }

  ag::Var<T> operator()(const ag::Var<T>& x, const ag::Var<T>& temb) const {
    ag::Var<T> h = c1_(ag::silu(gn1_(x)));
    h = ag::add_sample_channel_bias(h, temb_(temb));
    h = c2_(ag::silu(gn2_(h)));
    return ag::add(h, projects_ ? skip_(x) : x);
  }

 private:
  nn::GroupNorm<T> gn1_;
  nn::Conv2d<T> c1_;
  nn::Linear<T> temb_;
  nn::GroupNorm<T> gn2_;
  nn::Conv2d<T> c2_;
  nn::Conv2d<T> skip_;
  bool projects_ = false;
};

// Self-attention over spatial tokens, then cross-attention over the style
// context, each as a residual with a zero-initialized output projection.
template <typename T>
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(nn::ParamStore<T>& ps, const std::string& name, int64_t channels,
                 int64_t d_tau, Rng& rng)
      : gn_self_(ps, name + ".gns", channels, pick_groups(channels)),
        self_w_(ps, name + ".self", channels, channels, channels, rng),
        self_out_(ps, name + ".selfo", channels, channels, rng, true,
                  nn::Init::zero),
        gn_cross_(ps, name + ".gnc", channels, pick_groups(channels)),
        cross_w_(ps, name + ".cross", channels, d_tau, channels, rng),
        cross_out_(ps, name + ".crosso", channels, channels, rng, true,
                   nn::Init::zero) {}

  ag::Var<T> operator()(const ag::Var<T>& x, const ag::Var<T>& ctx) const {
    const int64_t H = x.value().dim(2), W = x.value().dim(3);
    ag::Var<T> t = ag::flatten_tokens(gn_self_(x));
    ag::Var<T> a = self_out_(cond::cross_attention(t, t, self_w_));
    ag::Var<T> h = ag::add(x, ag::unflatten_tokens(a, H, W));
    ag::Var<T> t2 = ag::flatten_tokens(gn_cross_(h));
    ag::Var<T> b = cross_out_(cond::cross_attention(t2, ctx, cross_w_));
    return ag::add(h, ag::unflatten_tokens(b, H, W));
  }

 private:
  nn::GroupNorm<T> gn_self_;
  cond::AttentionWeights<T> self_w_;
  nn::Linear<T> self_out_;
  nn::GroupNorm<T> gn_cross_;
  cond::AttentionWeights<T> cross_w_;
  nn::Linear<T> cross_out_;
};

// The denoiser: a convolutional encoder-decoder over latents with skip
// concatenation, timestep embeddings in every block, and attention where the
// config places it. Downsampling is a stride-2 2x2 convolution; upsampling a
// 2x2 stride-2 transposed convolution (1x1 conv + depth-to-space). The final
// convolution starts at zero, so a fresh network predicts zero noise.
template <typename T>
class UNet {
 public:
  UNet(nn::ParamStore<T>& ps, const std::string& name, const UNetConfig& cfg,
       Rng& rng)
      : cfg_(cfg), temb_(ps, name + ".temb", cfg.t_dim, rng) {
    cfg_.validate();
    const int64_t S = cfg_.stages();
    Tensor<T> nt({1, cfg_.d_tau});
    for (int64_t i = 0; i < nt.numel(); ++i) nt[i] = static_cast<T>(rng.normal() * 0.02);
    null_ctx_ = ps.add(name + ".null_ctx", std::move(nt));

    conv_in_ = nn::Conv2d<T>(ps, name + ".in", cfg_.in_channels, cfg_.widths[0], 3,
                             1, 1, rng);
    for (int64_t s = 0; s < S; ++s) {
      const bool attn = cfg_.attention_at(s);
      for (int64_t l = 0; l < cfg_.num_layers; ++l) {
        const int64_t cin =
            l == 0 ? (s == 0 ? cfg_.widths[0] : cfg_.widths[s - 1]) : cfg_.widths[s];
        enc_res_.emplace_back(ps, name + ".enc" + std::to_string(s) + "_" +
                                      std::to_string(l),
                              cin, cfg_.widths[s], cfg_.t_dim, rng);
        if (attn)
          enc_attn_.emplace_back(ps, name + ".encattn" + std::to_string(s) + "_" +
                                         std::to_string(l),
                                 cfg_.widths[s], cfg_.d_tau, rng);
      }
      if (s + 1 < S)
        down_.emplace_back(ps, name + ".down" + std::to_string(s), cfg_.widths[s],
                           cfg_.widths[s], 2, 2, 0, rng);
    }
    const int64_t deep = cfg_.widths[S - 1];
    mid1_ = ResBlock<T>(ps, name + ".mid1", deep, deep, cfg_.t_dim, rng);
    if (cfg_.attention_at(S - 1))
      mid_attn_ = AttentionBlock<T>(ps, name + ".midattn", deep, cfg_.d_tau, rng);
    mid2_ = ResBlock<T>(ps, name + ".mid2", deep, deep, cfg_.t_dim, rng);
    for (int64_t s = S - 1; s >= 0; --s) {
      const bool attn = cfg_.attention_at(s);
      for (int64_t l = 0; l < cfg_.num_layers; ++l) {
        const int64_t cin = l == 0 ? 2 * cfg_.widths[s] : cfg_.widths[s];
        dec_res_.emplace_back(ps, name + ".dec" + std::to_string(s) + "_" +
                                      std::to_string(l),
                              cin, cfg_.widths[s], cfg_.t_dim, rng);
        if (attn)
          dec_attn_.emplace_back(ps, name + ".decattn" + std::to_string(s) + "_" +
                                         std::to_string(l),
                                 cfg_.widths[s], cfg_.d_tau, rng);
      }
      if (s > 0)
        up_.emplace_back(ps, name + ".up" + std::to_string(s), cfg_.widths[s],
                         4 * cfg_.widths[s - 1], 1, 1, 0, rng);
    }
    gn_out_ = nn::GroupNorm<T>(ps, name + ".gnout", cfg_.widths[0],
                               pick_groups(cfg_.widths[0]));
    conv_out_ = nn::Conv2d<T>(ps, name + ".out", cfg_.widths[0], cfg_.in_channels,
                              3, 1, 1, rng, true, nn::Init::zero);
  }

  const UNetConfig& config() const { return cfg_; }
  const TimestepEmbed<T>& timestep_embed() const { return temb_; }

  // Learned context rows standing in for an absent condition: [B, 1, d_tau].
  ag::Var<T> null_context(int64_t B) const {
    return ag::embedding(null_ctx_, std::vector<int64_t>(B, 0), B, 1);
  }

  // z_t: [B, C, H, W]; t_emb: [B, t_dim]; ctx may be null (unconditional).
  ag::Var<T> operator()(const ag::Var<T>& z_t, const ag::Var<T>& t_emb,
                        const cond::ConditionTokens<T>* ctx) const {
    const auto& zv = z_t.value();
    if (zv.rank() != 4 || zv.dim(1) != cfg_.in_channels)
      throw std::invalid_argument("unet: input must be [B, C, H, W]");
    const int64_t B = zv.dim(0), H = zv.dim(2), W = zv.dim(3);
    const int64_t S = cfg_.stages();
    const int64_t div = int64_t(1) << (S - 1);
    if (H % div != 0 || W % div != 0)
      throw std::invalid_argument("unet: spatial dims must divide " +
                                  std::to_string(div));
    if (t_emb.value().rank() != 2 || t_emb.value().dim(0) != B ||
        t_emb.value().dim(1) != cfg_.t_dim)
      throw std::invalid_argument("unet: t_emb must be [B, t_dim]");

    ag::Var<T> c;
    if (ctx != nullptr) {
      c = ctx->tokens;
      if (c.value().rank() == 2) {
        if (B != 1) throw std::invalid_argument("unet: rank-2 ctx needs B == 1");
        c = ag::reshape(c, {1, c.value().dim(0), c.value().dim(1)});
      }
      if (c.value().rank() != 3 || c.value().dim(0) != B ||
          c.value().dim(2) != cfg_.d_tau)
        throw std::invalid_argument("unet: ctx must be [B, M, d_tau]");
    } else {
      c = null_context(B);
    }

    ag::Var<T> h = conv_in_(z_t);
    std::vector<ag::Var<T>> skips;
    std::size_t er = 0, ea = 0;
    for (int64_t s = 0; s < S; ++s) {
      const bool attn = cfg_.attention_at(s);
      for (int64_t l = 0; l < cfg_.num_layers; ++l) {
        h = enc_res_[er++](h, t_emb);
        if (attn) h = enc_attn_[ea++](h, c);
      }
      skips.push_back(h);
      if (s + 1 < S) h = down_[static_cast<std::size_t>(s)](h);
    }
    h = mid1_(h, t_emb);
    if (cfg_.attention_at(S - 1)) h = mid_attn_(h, c);
    h = mid2_(h, t_emb);
    std::size_t dr = 0, da = 0, u = 0;
    for (int64_t s = S - 1; s >= 0; --s) {
      const bool attn = cfg_.attention_at(s);
      h = ag::concat_axis1(h, skips[static_cast<std::size_t>(s)]);
      for (int64_t l = 0; l < cfg_.num_layers; ++l) {
        h = dec_res_[dr++](h, t_emb);
        if (attn) h = dec_attn_[da++](h, c);
      }
      if (s > 0) h = ag::pixel_shuffle2(up_[u++](h));
    }
    return conv_out_(ag::silu(gn_out_(h)));
  }

 private:
  UNetConfig cfg_;
  TimestepEmbed<T> temb_;
  ag::Var<T> null_ctx_;
  nn::Conv2d<T> conv_in_;
  std::vector<ResBlock<T>> enc_res_;
  std::vector<AttentionBlock<T>> enc_attn_;
  std::vector<nn::Conv2d<T>> down_;
  ResBlock<T> mid1_, mid2_;
  AttentionBlock<T> mid_attn_;
  std::vector<ResBlock<T>> dec_res_;
  std::vector<AttentionBlock<T>> dec_attn_;
  std::vector<nn::Conv2d<T>> up_;
  nn::GroupNorm<T> gn_out_;
  nn::Conv2d<T> conv_out_;
};

}  // namespace mst::backbone

#endif  // MST_BACKBONE_UNET_HPP_
