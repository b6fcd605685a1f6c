// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "mst/core/rng.hpp"
#include "mst/vocoder/vocoder.hpp"

using namespace mst;
using namespace mst::vocoder;
using VarD = ag::Var<double>;
using TenD = Tensor<double>;

namespace {

TenD randn(Rng& rng, std::vector<int64_t> shape, double scale = 1.0) {
  TenD t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * scale;
  return t;
}

template <typename T>
void randomize_params(nn::ParamStore<T>& ps, Rng& rng, double scale = 0.1) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& v = ps.var(i).value();
    for (int64_t j = 0; j < v.numel(); ++j)
      v[j] = static_cast<T>(rng.normal() * scale);
  }
}

VocoderConfig tiny_cfg() {
  VocoderConfig c;
  c.widths = {3, 4, 5, 5};
  c.latent_channels = 4;
  c.encoder_width = 4;
  return c;
}

dsp::Spectrogram make_spec(Rng& rng, int64_t bins, int64_t frames,
                           int64_t length = 0) {
  dsp::Spectrogram s;
  s.magnitude = TenD({bins, frames});
  for (int64_t i = 0; i < s.magnitude.numel(); ++i) s.magnitude[i] = rng.uniform();
  s.scale = dsp::Scale::decibel;
  s.length = length;
  return s;
}

}  // namespace

TEST_CASE("config validation and schedule shape") {
  VocoderConfig cfg;
  cfg.validate();
  CHECK(cfg.hop() == 100);
  VocoderConfig::toy().validate();

  VocoderConfig bad = cfg;
  bad.widths = {16, 24, 32};
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.up_factors = {4, 5, 1};
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.beta_end = 1.0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.inference_steps = 0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.inference_steps = 51;
  CHECK_THROWS(bad.validate());

  diffusion::NoiseSchedule s = cfg.schedule();
  CHECK(s.T == 50);
  CHECK(std::abs(s.beta(1) - 1e-4) < 1e-12);
  CHECK(std::abs(s.beta(50) - 0.7) < 1e-12);
  CHECK(s.alpha_bar(50) > 0.0);
  CHECK(s.alpha_bar(50) < 1e-3);
}

TEST_CASE("spectrogram encoder is bounded, aligned, and sensitive") {
  nn::ParamStore<double> ps;
  Rng rng(31);
  Vocoder<double> voc(ps, "v", tiny_cfg(), rng);
  Rng data(32);
  dsp::Spectrogram s = make_spec(data, 17, 9);
  TenD code = voc.encode_spectrogram(s).value();
  CHECK(code.shape() == std::vector<int64_t>({1, 9, 4}));
  for (int64_t i = 0; i < code.numel(); ++i) {
    CHECK(std::abs(code[i]) <= 1.0);
    CHECK(std::isfinite(code[i]));
  }

  dsp::Spectrogram zero = s;
  for (int64_t i = 0; i < zero.magnitude.numel(); ++i) zero.magnitude[i] = 0.0;
  TenD zc = voc.encode_spectrogram(zero).value();
  for (int64_t i = 0; i < zc.numel(); ++i) CHECK(zc[i] == 0.0);

  dsp::Spectrogram bumped = s;
  bumped.magnitude[3 * 9 + 4] += 0.25;
  TenD bc = voc.encode_spectrogram(bumped).value();
  double diff = 0;
  for (int64_t i = 0; i < bc.numel(); ++i)
    diff = std::max(diff, std::abs(bc[i] - code[i]));
  CHECK(diff > 0.0);

  dsp::Spectrogram bad_hop = s;
  bad_hop.params.hop = 64;
  CHECK_THROWS(voc.encode_spectrogram(bad_hop));
}

TEST_CASE("fresh denoiser preserves length and predicts zero") {
  nn::ParamStore<double> ps;
  Rng rng(33);
  Vocoder<double> voc(ps, "v", tiny_cfg(), rng);
  Rng data(34);
  for (int64_t L : {800, 8000, 16000}) {
    VarD y = VarD::constant(randn(data, {1, 1, L}));
    VarD code = VarD::constant(randn(data, {1, L / 100, 4}, 0.5));
    TenD out = voc.denoise(y, code, 0.5).value();
    REQUIRE(out.shape() == y.value().shape());
    for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 0.0);
  }

  VarD y = VarD::constant(randn(data, {1, 1, 800}));
  VarD code = VarD::constant(randn(data, {1, 8, 4}));
  CHECK_THROWS(voc.denoise(VarD::constant(randn(data, {1, 1, 801})), code, 0.5));
  CHECK_THROWS(voc.denoise(y, VarD::constant(randn(data, {1, 7, 4})), 0.5));
  CHECK_THROWS(voc.denoise(y, VarD::constant(randn(data, {1, 8, 3})), 0.5));
  CHECK_THROWS(voc.denoise(y, code, 0.0));
  CHECK_THROWS(voc.denoise(y, code, 1.1));
  CHECK_THROWS(voc.denoise(VarD::constant(randn(data, {1, 800})), code, 0.5));
}

TEST_CASE("conditioning code and noise level are live inputs") {
  nn::ParamStore<double> ps;
  Rng rng(35);
  Vocoder<double> voc(ps, "v", tiny_cfg(), rng);
  randomize_params(ps, rng);
  Rng data(36);
  VarD y = VarD::constant(randn(data, {1, 1, 400}));
  VarD code = VarD::constant(randn(data, {1, 4, 4}, 0.5));
  TenD base = voc.denoise(y, code, 0.5).value();

  TenD c2 = code.value();
  c2[5] += 0.3;
  TenD moved = voc.denoise(y, VarD::constant(c2), 0.5).value();
  double dcode = 0;
  for (int64_t i = 0; i < base.numel(); ++i)
    dcode = std::max(dcode, std::abs(base[i] - moved[i]));
  CHECK(dcode > 0.0);

  TenD shifted = voc.denoise(y, code, 0.8).value();
  double dlevel = 0;
  for (int64_t i = 0; i < base.numel(); ++i)
    dlevel = std::max(dlevel, std::abs(base[i] - shifted[i]));
  CHECK(dlevel > 0.0);
}

TEST_CASE("vocoder loss reduces to closed forms") {
  // Direct L1 identities.
  Rng rng(37);
  TenD e = randn(rng, {1, 1, 50});
  TenD ec = e;
  for (int64_t i = 0; i < ec.numel(); ++i) ec[i] += 0.37;
  CHECK(ag::l1_loss(VarD::constant(e), VarD::constant(e)).value()[0] == 0.0);
  CHECK(std::abs(ag::l1_loss(VarD::constant(ec), VarD::constant(e)).value()[0] -
                 0.37) < 1e-12);

  // A fresh vocoder predicts zero, so the loss is the mean |eps|.
  nn::ParamStore<double> ps;
  Vocoder<double> voc(ps, "v", tiny_cfg(), rng);
  Rng data(38);
  TenD y0 = randn(data, {1, 1, 300}, 0.3);
  TenD eps = randn(data, {1, 1, 300});
  VarD code = VarD::constant(randn(data, {1, 3, 4}, 0.5));
  diffusion::NoiseSchedule sched = tiny_cfg().schedule();
  const double loss = vocoder_loss(voc, y0, eps, code, 25, sched).value()[0];
  double mean_abs = 0;
  for (int64_t i = 0; i < eps.numel(); ++i) mean_abs += std::abs(eps[i]);
  mean_abs /= static_cast<double>(eps.numel());
  CHECK(std::abs(loss - mean_abs) < 1e-12);

  // Against a randomized model the loss matches an elementwise oracle.
  randomize_params(ps, rng);
  const double loss2 = vocoder_loss(voc, y0, eps, code, 25, sched).value()[0];
  TenD y_n = diffusion::forward_sample<double>(y0, 25, eps, sched);
  TenD eps_hat =
      voc.denoise(VarD::constant(y_n), code, std::sqrt(sched.alpha_bar(25)))
          .value();
  double oracle = 0;
  for (int64_t i = 0; i < eps.numel(); ++i) oracle += std::abs(eps_hat[i] - eps[i]);
  oracle /= static_cast<double>(eps.numel());
  CHECK(std::abs(loss2 - oracle) < 1e-10);

  CHECK_THROWS(vocoder_loss(voc, y0, randn(data, {1, 1, 200}), code, 25, sched));
}

TEST_CASE("analytic gradients match finite differences on a tiny vocoder") {
  nn::ParamStore<double> ps;
  Rng rng(39);
  Vocoder<double> voc(ps, "v", tiny_cfg(), rng);
  randomize_params(ps, rng);
  Rng data(40);
  dsp::Spectrogram spec = make_spec(data, 9, 1);
  TenD y0 = randn(data, {1, 1, 100}, 0.3);
  TenD eps = randn(data, {1, 1, 100});
  diffusion::NoiseSchedule sched = tiny_cfg().schedule();

  auto build = [&] {
    return vocoder_loss(voc, y0, eps, voc.encode_spectrogram(spec), 25, sched);
  };

  // Keep clear of the L1 kink so central differences stay one-sided.
  {
    ag::NoGradGuard ng;
    TenD y_n = diffusion::forward_sample<double>(y0, 25, eps, sched);
    TenD eh = voc.denoise(VarD::constant(y_n), voc.encode_spectrogram(spec),
                          std::sqrt(sched.alpha_bar(25)))
                  .value();
    double min_gap = 1e9;
    for (int64_t i = 0; i < eps.numel(); ++i)
      min_gap = std::min(min_gap, std::abs(eh[i] - eps[i]));
    REQUIRE(min_gap > 1e-3);
  }

  ps.zero_grad();
  VarD loss = build();
  loss.backward();

  const double h = 1e-5;
  int checked = 0;
  for (std::size_t p = 0; p < ps.size(); ++p) {
    auto& v = ps.var(p);
    REQUIRE(v.has_grad());
    for (int64_t i = 0; i < v.value().numel(); ++i) {
      const double orig = v.value()[i];
      double fp, fm;
      {
        ag::NoGradGuard ng;
        v.value()[i] = orig + h;
        fp = build().value()[0];
        v.value()[i] = orig - h;
        fm = build().value()[0];
      }
      v.value()[i] = orig;
      const double num = (fp - fm) / (2 * h);
      CHECK(std::abs(num - v.grad()[i]) <= 1e-4 * std::max(1.0, std::abs(num)));
      ++checked;
    }
  }
  CHECK(checked > 500);
}

TEST_CASE("synthesis is seeded and refuses an untrained model") {
  nn::ParamStore<double> ps;
  Rng rng(41);
  Vocoder<double> voc(ps, "v", tiny_cfg(), rng);
  Rng data(42);
  dsp::Spectrogram spec = make_spec(data, 9, 5, 450);
  CHECK_THROWS_AS(voc.synthesize(spec, 10, 7), std::runtime_error);

  randomize_params(ps, rng, 0.05);
  dsp::Waveform a = voc.synthesize(spec, 10, 7);
  CHECK(a.size() == 400);
  for (double v : a.samples) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  dsp::Waveform b = voc.synthesize(spec, 10, 7);
  REQUIRE(b.size() == a.size());
  bool same = true;
  for (std::size_t i = 0; i < a.samples.size(); ++i)
    same = same && a.samples[i] == b.samples[i];
  CHECK(same);
  dsp::Waveform c = voc.synthesize(spec, 10, 8);
  bool differs = false;
  for (std::size_t i = 0; i < a.samples.size(); ++i)
    differs = differs || a.samples[i] != c.samples[i];
  CHECK(differs);

  CHECK_THROWS(voc.synthesize(spec, 0, 7));
  CHECK_THROWS(voc.synthesize(spec, 51, 7));
  dsp::Spectrogram tiny = make_spec(data, 9, 1, 50);
  CHECK_THROWS(voc.synthesize(tiny, 10, 7));
}
