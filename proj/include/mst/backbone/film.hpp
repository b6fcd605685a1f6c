// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MST_BACKBONE_FILM_HPP_
#define MST_BACKBONE_FILM_HPP_

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "mst/core/autograd.hpp"
#include "mst/core/nn.hpp"

namespace mst::backbone {

namespace ag = mst::ag;

// Feature-wise linear modulation driven by the noise level sqrt(alpha_bar).
// The level passes through a sinusoidal encoding, two 3x1 convolutions with
// a leaky rectifier between them, and a pooled head emitting per-channel
// scale and shift: out = x * (1 + gamma) + xi. The final convolution starts
// at zero, so a fresh block is the identity.
template <typename T>
class FilmBlock {
 public:
  FilmBlock() = default;
  FilmBlock(nn::ParamStore<T>& ps, const std::string& name, int64_t channels,
            Rng& rng, int64_t pe_dim = 32, int64_t hidden = 8)
      : channels_(channels),
        pe_dim_(pe_dim),
        c1_(ps, name + ".c1", 1, hidden, 3, 1, 1, rng),
        c2_(ps, name + ".c2", hidden, 2 * channels, 3, 1, 1, rng, true,
            nn::Init::zero) {
    if (pe_dim < 4 || pe_dim % 2 != 0)
      throw std::invalid_argument("film: encoding dim must be even, >= 4");
  }

  // x: [B, C, ...spatial]; level: [B] with entries in (0, 1].
  ag::Var<T> operator()(const ag::Var<T>& x, const ag::Var<T>& level) const {
    const auto& xv = x.value();
    const auto& lv = level.value();
    if (xv.rank() < 3 || xv.dim(1) != channels_)
      throw std::invalid_argument("film: features must be [B, C, ...]");
    if (lv.rank() != 1 || lv.dim(0) != xv.dim(0))
      throw std::invalid_argument("film: one level per sample");
    for (int64_t i = 0; i < lv.numel(); ++i)
      if (!(lv[i] > T(0)) || lv[i] > T(1))
        throw std::domain_error("film: level outside (0, 1]");
    const int64_t B = xv.dim(0), half = pe_dim_ / 2;

    // Sinusoidal features of the level, geometric frequencies 1..1000.
    Tensor<T> ones_row({1, half});
    Tensor<T> omega({B, half});
    for (int64_t i = 0; i < half; ++i) ones_row[i] = T(1);
    for (int64_t k = 0; k < half; ++k) {
      const double w = std::pow(1000.0, static_cast<double>(k) /
                                            static_cast<double>(half - 1));
      for (int64_t b = 0; b < B; ++b) omega[b * half + k] = static_cast<T>(w);
    }
    ag::Var<T> rep =
        ag::matmul(ag::reshape(level, {B, 1}), ag::Var<T>::constant(ones_row));
    ag::Var<T> u = ag::mul(rep, ag::Var<T>::constant(std::move(omega)));
    ag::Var<T> pe = ag::concat_axis1(ag::sin_op(u), ag::cos_op(u));  // [B, pe]

    ag::Var<T> h = ag::reshape(pe, {B, 1, pe_dim_});
    h = ag::leaky_relu(c1_(h), T(0.2));
    h = c2_(h);                                    // [B, 2C, pe]
    ag::Var<T> pooled = ag::global_avg_pool(h);    // [B, 2C]
    ag::Var<T> gamma = ag::slice_axis1(pooled, 0, channels_);
    ag::Var<T> xi = ag::slice_axis1(pooled, channels_, channels_);
    return ag::scale_shift_channels(x, gamma, xi);
  }

  // Single shared level for the whole batch.
  ag::Var<T> operator()(const ag::Var<T>& x, double level) const {
    Tensor<T> l({x.value().dim(0)});
    for (int64_t i = 0; i < l.numel(); ++i) l[i] = static_cast<T>(level);
    return (*this)(x, ag::Var<T>::constant(std::move(l)));
  }

  int64_t channels() const { return channels_; }

 private:
  int64_t channels_ = 0;
  int64_t pe_dim_ = 32;
  nn::Conv1d<T> c1_, c2_;
};

}  // namespace mst::backbone

#endif  // MST_BACKBONE_FILM_HPP_
