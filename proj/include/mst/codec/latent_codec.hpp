// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0
//
// Perceptual compression autoencoder. The encoder maps a (normalized,
// channel-replicated) spectrogram image to a diagonal Gaussian over a
// low-dimensional latent; the decoder maps a latent back to image space
// with a bounded activation. Training combines pixel reconstruction, a
// fixed random-projection perceptual distance, and a small KL penalty.

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mst/core/autograd.hpp"
#include "mst/core/nn.hpp"
#include "mst/core/rng.hpp"
#include "mst/dsp/stft.hpp"

namespace mst::codec {

namespace ag = mst::ag;

struct CodecConfig {
  int64_t in_channels = 3;
  int64_t downsample_factor = 4;
  int64_t latent_channels = 4;
  int64_t base_width = 32;
  double perceptual_weight = 0.1;
  double kl_weight = 1e-6;
  double log_var_min = -30.0;
  double log_var_max = 20.0;

  int64_t stages() const {
    int64_t s = 0;
    for (int64_t f = downsample_factor; f > 1; f /= 2) ++s;
    return s;
  }

  void validate() const {
    const int64_t f = downsample_factor;
    if (f < 2 || (f & (f - 1)) != 0)
      throw std::invalid_argument("codec: downsample factor must be a power of 2");
    if (in_channels < 1 || latent_channels < 1 || base_width < 1)
      throw std::invalid_argument("codec: channel counts must be positive");
    if (kl_weight < 0) throw std::invalid_argument("codec: kl_weight must be >= 0");
    if (perceptual_weight < 0)
      throw std::invalid_argument("codec: perceptual weight must be >= 0");
    if (!(log_var_min < log_var_max))
      throw std::invalid_argument("codec: bad log variance clamp range");
  }
};

// Diagonal Gaussian over the latent, both fields [N, c, h, w].
template <typename T>
struct GaussianLatent {
  ag::Var<T> mean;
  ag::Var<T> log_var;
};

// z = mean + exp(log_var / 2) * noise; noise is treated as a constant.
template <typename T>
ag::Var<T> sample_latent(const GaussianLatent<T>& g, const Tensor<T>& noise) {
  if (noise.shape() != g.mean.value().shape())
    throw std::invalid_argument("sample_latent: noise shape mismatch");
  ag::Var<T> sigma = ag::exp_op(ag::mul_scalar(g.log_var, T(0.5)));
  return ag::add(g.mean, ag::mul(sigma, ag::Var<T>::constant(noise)));
}

// Mean over elements of 0.5 * (mu^2 + sigma^2 - 1 - log sigma^2) against a
// standard normal prior. Zero exactly when mean = 0 and log_var = 0.
template <typename T>
ag::Var<T> kl_penalty(const GaussianLatent<T>& g) {
  if (g.mean.value().shape() != g.log_var.value().shape())
    throw std::invalid_argument("kl_penalty: mean/log_var shape mismatch");
  ag::Var<T> t = ag::add(ag::mul(g.mean, g.mean), ag::exp_op(g.log_var));
  t = ag::add_scalar(ag::sub(t, g.log_var), T(-1));
  return ag::mul_scalar(ag::mean_all(t), T(0.5));
}

// Multi-resolution distance in fixed random-projection feature spaces.
// The filter banks are regenerated from a pinned seed, so the distance is
// a deterministic function of the two images. Banks whose output would be
// empty for the given size are skipped.
template <typename T>
ag::Var<T> perceptual_loss(const ag::Var<T>& x, const ag::Var<T>& x_hat) {
  const auto& xv = x.value();
  if (xv.shape() != x_hat.value().shape())
    throw std::invalid_argument("perceptual_loss: shape mismatch");
  if (xv.rank() != 4) throw std::invalid_argument("perceptual_loss: NCHW required");
  const int64_t C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);

  struct Bank {
    int64_t k, stride, pad, filters;
  };
  const Bank banks[] = {{3, 1, 1, 8}, {4, 2, 1, 8}, {8, 4, 2, 8}};
  ag::Var<T> total;
  int used = 0;
  Rng rng(0x7ece00);
  ag::Var<T> no_bias;
  for (const Bank& bk : banks) {
    Tensor<T> w({bk.filters, C, bk.k, bk.k});
    const double scale = 1.0 / std::sqrt(static_cast<double>(C * bk.k * bk.k));
    for (int64_t i = 0; i < w.numel(); ++i)
      w[i] = static_cast<T>(rng.normal() * scale);
    if ((H + 2 * bk.pad - bk.k) / bk.stride + 1 <= 0) continue;
    if ((W + 2 * bk.pad - bk.k) / bk.stride + 1 <= 0) continue;
    ag::Var<T> wc = ag::Var<T>::constant(std::move(w));
    ag::Var<T> fa = ag::conv2d(x, wc, no_bias, bk.stride, bk.pad);
    ag::Var<T> fb = ag::conv2d(x_hat, wc, no_bias, bk.stride, bk.pad);
    ag::Var<T> d = ag::mse_loss(fb, fa);
    total = used == 0 ? d : ag::add(total, d);
    ++used;
  }
  if (used == 0) throw std::invalid_argument("perceptual_loss: input too small");
  return ag::mul_scalar(total, T(1) / static_cast<T>(used));
}

template <typename T>
class LatentCodec {
 public:
  LatentCodec(nn::ParamStore<T>& ps, const std::string& name,
              const CodecConfig& cfg, Rng& rng)
      : cfg_(cfg) {
    cfg_.validate();
    const int64_t S = cfg_.stages();
    auto width = [&](int64_t s) { return cfg_.base_width << s; };

    enc_in_ = nn::Conv2d<T>(ps, name + ".enc.in", cfg_.in_channels, width(0), 3,
                            1, 1, rng);
    for (int64_t s = 0; s < S; ++s) {
      enc_gn_.emplace_back(ps, name + ".enc.gn" + std::to_string(s), width(s),
                           nn::pick_groups(width(s)));
      enc_down_.emplace_back(ps, name + ".enc.down" + std::to_string(s), width(s),
                             width(s + 1), 3, 2, 1, rng);
    }
    enc_gn_out_ = nn::GroupNorm<T>(ps, name + ".enc.gn_out", width(S),
                                   nn::pick_groups(width(S)));
    enc_out_ = nn::Conv2d<T>(ps, name + ".enc.out", width(S),
                             2 * cfg_.latent_channels, 3, 1, 1, rng);

    dec_in_ = nn::Conv2d<T>(ps, name + ".dec.in", cfg_.latent_channels, width(S),
                            3, 1, 1, rng);
    for (int64_t s = S; s > 0; --s) {
      dec_gn_.emplace_back(ps, name + ".dec.gn" + std::to_string(s), width(s),
                           nn::pick_groups(width(s)));
      dec_up_.emplace_back(ps, name + ".dec.up" + std::to_string(s), width(s),
                           4 * width(s - 1), 1, 1, 0, rng);
    }
    dec_gn_out_ = nn::GroupNorm<T>(ps, name + ".dec.gn_out", width(0),
                                   nn::pick_groups(width(0)));
    dec_out_ = nn::Conv2d<T>(ps, name + ".dec.out", width(0), cfg_.in_channels, 3,
                             1, 1, rng);
  }

  const CodecConfig& config() const { return cfg_; }

  GaussianLatent<T> encode(const ag::Var<T>& x) const {
    const auto& xv = x.value();
    if (xv.rank() != 4 || xv.dim(1) != cfg_.in_channels)
      throw std::invalid_argument("encode: NCHW input with configured channels");
    const int64_t f = cfg_.downsample_factor;
    if (xv.dim(2) % f != 0 || xv.dim(3) % f != 0)
      throw std::invalid_argument(
          "encode: spatial dims must be divisible by the downsample factor; "
          "pad the input first");
    ag::Var<T> h = enc_in_(x);
    for (std::size_t s = 0; s < enc_down_.size(); ++s)
      h = enc_down_[s](ag::silu(enc_gn_[s](h)));
    h = enc_out_(ag::silu(enc_gn_out_(h)));
    const int64_t c = cfg_.latent_channels;
    GaussianLatent<T> g;
    g.mean = ag::slice_axis1(h, 0, c);
    g.log_var = ag::clamp(ag::slice_axis1(h, c, c),
                          static_cast<T>(cfg_.log_var_min),
                          static_cast<T>(cfg_.log_var_max));
    return g;
  }

  // Latent to image space; sigmoid keeps every entry inside [0, 1].
  ag::Var<T> decode(const ag::Var<T>& z) const {
    const auto& zv = z.value();
    if (zv.rank() != 4 || zv.dim(1) != cfg_.latent_channels)
      throw std::invalid_argument("decode: latent channel mismatch");
    ag::Var<T> h = dec_in_(z);
    for (std::size_t s = 0; s < dec_up_.size(); ++s)
      h = ag::pixel_shuffle2(dec_up_[s](ag::silu(dec_gn_[s](h))));
    return ag::sigmoid(dec_out_(ag::silu(dec_gn_out_(h))));
  }

 private:
  CodecConfig cfg_;
  nn::Conv2d<T> enc_in_;
  std::vector<nn::GroupNorm<T>> enc_gn_;
  std::vector<nn::Conv2d<T>> enc_down_;
  nn::GroupNorm<T> enc_gn_out_;
  nn::Conv2d<T> enc_out_;
  nn::Conv2d<T> dec_in_;
  std::vector<nn::GroupNorm<T>> dec_gn_;
  std::vector<nn::Conv2d<T>> dec_up_;
  nn::GroupNorm<T> dec_gn_out_;
  nn::Conv2d<T> dec_out_;
};

template <typename T>
struct CodecLoss {
  ag::Var<T> total;
  ag::Var<T> reconstruction;
  ag::Var<T> perceptual;
  ag::Var<T> kl;
};

// Pixel MSE + weighted perceptual distance + weighted KL penalty. The parts
// are kept unweighted for logging; total applies the configured weights.
template <typename T>
CodecLoss<T> codec_loss(const ag::Var<T>& x, const ag::Var<T>& x_hat,
                        const GaussianLatent<T>& g, const CodecConfig& cfg) {
  if (x.value().shape() != x_hat.value().shape())
    throw std::invalid_argument("codec_loss: shape mismatch");
  CodecLoss<T> parts;
  parts.reconstruction = ag::mse_loss(x_hat, x);
  parts.perceptual = perceptual_loss(x, x_hat);
  parts.kl = kl_penalty(g);
  parts.total = ag::add(
      parts.reconstruction,
      ag::add(ag::mul_scalar(parts.perceptual, static_cast<T>(cfg.perceptual_weight)),
              ag::mul_scalar(parts.kl, static_cast<T>(cfg.kl_weight))));
  return parts;
}

// Normalized decibel spectrogram replicated across channels as an image
// batch of one. Linear-scale input is rejected: the codec works on the
// [0, 1] normalized representation only.
template <typename T>
Tensor<T> spectrogram_image(const dsp::Spectrogram& s, int64_t channels) {
  if (s.scale != dsp::Scale::decibel)
    throw std::invalid_argument("spectrogram_image: decibel scale required");
  if (channels < 1) throw std::invalid_argument("spectrogram_image: bad channels");
  const int64_t H = s.bins(), W = s.frames();
  Tensor<T> img({1, channels, H, W});
  for (int64_t c = 0; c < channels; ++c)
    for (int64_t i = 0; i < H * W; ++i)
      img[c * H * W + i] = static_cast<T>(s.magnitude[i]);
  return img;
}

// Inverse of spectrogram_image: average the channels, clamp to [0, 1], and
// carry the metadata of a reference spectrogram with matching dims.
template <typename T>
dsp::Spectrogram image_spectrogram(const Tensor<T>& img,
                                   const dsp::Spectrogram& like) {
  if (img.rank() != 4 || img.dim(0) != 1)
    throw std::invalid_argument("image_spectrogram: [1, C, H, W] required");
  const int64_t C = img.dim(1), H = img.dim(2), W = img.dim(3);
  dsp::Spectrogram out = like;
  out.scale = dsp::Scale::decibel;
  out.magnitude = TensorD({H, W});
  for (int64_t i = 0; i < H * W; ++i) {
    double acc = 0;
    for (int64_t c = 0; c < C; ++c) acc += static_cast<double>(img[c * H * W + i]);
    out.magnitude[i] = std::min(1.0, std::max(0.0, acc / static_cast<double>(C)));
  }
  return out;
}

// Pads bins and frames up to multiples of f with silence (zeros in the
// normalized decibel representation).
inline dsp::Spectrogram pad_to_multiple(const dsp::Spectrogram& s, int64_t f) {
  if (f < 1) throw std::invalid_argument("pad_to_multiple: bad factor");
  const int64_t H = s.bins(), W = s.frames();
  const int64_t Hp = (H + f - 1) / f * f;
  const int64_t Wp = (W + f - 1) / f * f;
  if (Hp == H && Wp == W) return s;
  dsp::Spectrogram out = s;
  out.magnitude = TensorD({Hp, Wp});
  for (int64_t i = 0; i < H; ++i)
    for (int64_t j = 0; j < W; ++j) out.magnitude[i * Wp + j] = s.magnitude[i * W + j];
  return out;
}

}  // namespace mst::codec
