// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <functional>
#include <string>
#include <unordered_set>
#include <vector>

#include "doctest.h"
#include "mst/backbone/film.hpp"
#include "mst/backbone/unet.hpp"
#include "mst/core/adam.hpp"
#include "mst/core/rng.hpp"

using namespace mst;
using namespace mst::backbone;
using VarD = ag::Var<double>;
using VarF = ag::Var<float>;
using TenD = Tensor<double>;

namespace {

TenD randn(Rng& rng, std::vector<int64_t> shape, double scale = 1.0) {
  TenD t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * scale;
  return t;
}

template <typename T>
void randomize_params(nn::ParamStore<T>& ps, Rng& rng, double scale = 0.05) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& v = ps.var(i).value();
    for (int64_t j = 0; j < v.numel(); ++j)
      v[j] = static_cast<T>(rng.normal() * scale);
  }
}

UNetConfig tiny_config() {
  UNetConfig c;
  c.in_channels = 2;
  c.widths = {8, 16};
  c.num_layers = 1;
  c.t_dim = 8;
  c.d_tau = 6;
  c.latent_h = 16;
  c.latent_w = 16;
  c.attention_resolutions = {8};
  c.validate();
  return c;
}

}  // namespace

TEST_CASE("sinusoidal features at step zero are zeros then ones") {
  TenD f = sinusoidal_time<double>(0.0, 8);
  for (int64_t i = 0; i < 4; ++i) {
    CHECK(f[i] == 0.0);
    CHECK(f[4 + i] == 1.0);
  }
  CHECK_THROWS(sinusoidal_time<double>(0.0, 7));
  CHECK_THROWS(sinusoidal_time<double>(0.0, 0));
  CHECK_THROWS(sinusoidal_time<double>(-1.0, 8));
}

TEST_CASE("sinusoidal features are pairwise distinct below ten thousand") {
  const int64_t dim = 16;
  std::unordered_set<std::string> seen;
  for (int64_t t = 0; t < 10000; ++t) {
    TenD f = sinusoidal_time<double>(static_cast<double>(t), dim);
    std::string key(reinterpret_cast<const char*>(f.data()),
                    sizeof(double) * static_cast<std::size_t>(dim));
    seen.insert(key);
  }
  CHECK(seen.size() == 10000);
}

TEST_CASE("timestep map is deterministic and separates steps") {
  nn::ParamStore<double> ps;
  Rng rng(1);
  TimestepEmbed<double> emb(ps, "t", 16, rng);
  TenD a = emb(5).value();
  TenD b = emb(5).value();
  TenD c = emb(6).value();
  bool same = true, differs = false;
  for (int64_t i = 0; i < a.numel(); ++i) {
    same = same && a[i] == b[i];
    differs = differs || a[i] != c[i];
  }
  CHECK(same);
  CHECK(differs);
  TenD batch = emb(std::vector<int64_t>{5, 6}).value();
  for (int64_t i = 0; i < 16; ++i) {
    CHECK(batch[i] == a[i]);
    CHECK(batch[16 + i] == c[i]);
  }
  CHECK_THROWS(TimestepEmbed<double>(ps, "odd", 7, rng));
}

TEST_CASE("film block is the identity at initialization") {
  nn::ParamStore<double> ps;
  Rng rng(2);
  FilmBlock<double> film(ps, "f", 6, rng);
  VarD x = VarD::constant(randn(rng, {2, 6, 4, 3}));
  TenD level({2});
  level[0] = 0.5;
  level[1] = 0.9;
  TenD out = film(x, VarD::constant(level)).value();
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == x.value()[i]);
  TenD single = film(x, 0.7).value();
  for (int64_t i = 0; i < single.numel(); ++i) CHECK(single[i] == x.value()[i]);
}

TEST_CASE("film with zero features broadcasts the shift") {
  nn::ParamStore<double> ps;
  Rng rng(3);
  FilmBlock<double> film(ps, "f", 5, rng);
  randomize_params(ps, rng, 0.3);
  VarD zero = VarD::constant(TenD({2, 5, 7}));
  TenD out = film(zero, 0.4).value();
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t c = 0; c < 5; ++c)
      for (int64_t l = 1; l < 7; ++l)
        CHECK(out[(b * 5 + c) * 7 + l] == out[(b * 5 + c) * 7]);

  // Affine in the features at a fixed level.
  VarD x = VarD::constant(randn(rng, {2, 5, 7}));
  VarD x2 = ag::mul_scalar(x, 2.0);
  TenD f0 = out;
  TenD f1 = film(x, 0.4).value();
  TenD f2 = film(x2, 0.4).value();
  for (int64_t i = 0; i < f1.numel(); ++i)
    CHECK(std::abs((f2[i] - f0[i]) - 2.0 * (f1[i] - f0[i])) < 1e-12);
}

TEST_CASE("film gradient with respect to the noise level matches differences") {
  nn::ParamStore<double> ps;
  Rng rng(4);
  FilmBlock<double> film(ps, "f", 4, rng);
  randomize_params(ps, rng, 0.2);
  VarD x = VarD::constant(randn(rng, {2, 4, 5}));
  VarD w = VarD::constant(randn(rng, {2, 4, 5}));
  TenD lv({2});
  lv[0] = 0.31;
  lv[1] = 0.82;
  VarD level = VarD::param(lv);
  auto build = [&] { return ag::sum_all(ag::mul(film(x, level), w)); };
  level.zero_grad();
  VarD loss = build();
  loss.backward();
  REQUIRE(level.has_grad());
  for (int64_t i = 0; i < 2; ++i) {
    const double orig = level.value()[i];
    double fp, fm;
    {
      ag::NoGradGuard ng;
      level.value()[i] = orig + 1e-5;
      fp = build().value()[0];
      level.value()[i] = orig - 1e-5;
      fm = build().value()[0];
    }
    level.value()[i] = orig;
    const double num = (fp - fm) / 2e-5;
    CHECK(std::abs(num - level.grad()[i]) <= 1e-4 * std::max(1.0, std::abs(num)));
  }
}

TEST_CASE("film rejects levels outside the unit interval") {
  nn::ParamStore<double> ps;
  Rng rng(5);
  FilmBlock<double> film(ps, "f", 3, rng);
  VarD x = VarD::constant(randn(rng, {1, 3, 4}));
  CHECK_THROWS(film(x, 0.0));
  CHECK_THROWS(film(x, -0.2));
  CHECK_THROWS(film(x, 1.5));
  TenD two({2});
  two[0] = 0.5;
  two[1] = 0.5;
  CHECK_THROWS(film(x, VarD::constant(two)));
}

TEST_CASE("unet config presets validate and bad configs do not") {
  UNetConfig toy = UNetConfig::toy();
  CHECK(toy.widths == std::vector<int64_t>({32, 64, 128}));
  CHECK(toy.attention_resolutions == std::vector<int64_t>({32, 16}));
  UNetConfig rect = UNetConfig::toy(36, 64);
  CHECK(rect.attention_resolutions == std::vector<int64_t>({18, 9}));
  CHECK(rect.resolution_ladder() == std::vector<int64_t>({36, 18, 9}));
  UNetConfig paper = UNetConfig::paper();
  CHECK(paper.widths == std::vector<int64_t>({512, 512, 512, 256, 128}));
  CHECK(paper.num_layers == 2);
  CHECK(paper.attention_resolutions == std::vector<int64_t>({16, 8, 4}));

  UNetConfig bad = tiny_config();
  bad.widths.clear();
  CHECK_THROWS(bad.validate());
  bad = tiny_config();
  bad.t_dim = 7;
  CHECK_THROWS(bad.validate());
  bad = tiny_config();
  bad.attention_resolutions = {7};
  CHECK_THROWS(bad.validate());
  bad = tiny_config();
  bad.latent_h = 18;
  CHECK(18 % 2 == 0);
  bad.widths = {8, 16, 32};
  CHECK_THROWS(bad.validate());
}

TEST_CASE("fresh unet preserves shape and predicts zero noise") {
  nn::ParamStore<float> ps;
  Rng rng(6);
  UNet<float> net(ps, "u", tiny_config(), rng);
  Rng data(7);
  Tensor<float> z({2, 2, 16, 16});
  for (int64_t i = 0; i < z.numel(); ++i) z[i] = static_cast<float>(data.normal());
  VarF temb = net.timestep_embed()(std::vector<int64_t>{3, 250});
  VarF out = net(VarF::constant(z), temb, nullptr);
  REQUIRE(out.value().shape() == z.shape());
  for (int64_t i = 0; i < out.value().numel(); ++i) CHECK(out.value()[i] == 0.0f);
}

TEST_CASE("toy preset handles a 64 by 64 latent") {
  nn::ParamStore<float> ps;
  Rng rng(8);
  UNet<float> net(ps, "u", UNetConfig::toy(), rng);
  Tensor<float> z({1, 4, 64, 64});
  Rng data(9);
  for (int64_t i = 0; i < z.numel(); ++i) z[i] = static_cast<float>(data.normal());
  VarF temb = net.timestep_embed()(std::vector<int64_t>{17});
  ag::NoGradGuard ng;
  VarF out = net(VarF::constant(std::move(z)), temb, nullptr);
  CHECK(out.value().shape() == std::vector<int64_t>({1, 4, 64, 64}));
}

TEST_CASE("absent context equals the learned null tokens") {
  nn::ParamStore<double> ps;
  Rng rng(10);
  UNet<double> net(ps, "u", tiny_config(), rng);
  randomize_params(ps, rng);
  Rng data(11);
  VarD z = VarD::constant(randn(data, {2, 2, 16, 16}));
  VarD temb = net.timestep_embed()(std::vector<int64_t>{40, 41});
  TenD a = net(z, temb, nullptr).value();
  cond::ConditionTokens<double> nulls{net.null_context(2)};
  TenD b = net(z, temb, &nulls).value();
  REQUIRE(a.shape() == b.shape());
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);

  // A real context changes the prediction.
  cond::ConditionTokens<double> ctx{VarD::constant(randn(data, {2, 3, 6}))};
  TenD c = net(z, temb, &ctx).value();
  double diff = 0;
  for (int64_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(a[i] - c[i]));
  CHECK(diff > 0.0);
}

TEST_CASE("perturbing one corner pixel reaches the whole output") {
  nn::ParamStore<double> ps;
  Rng rng(12);
  UNet<double> net(ps, "u", tiny_config(), rng);
  randomize_params(ps, rng);
  Rng data(13);
  TenD z = randn(data, {1, 2, 16, 16});
  VarD temb = net.timestep_embed()(std::vector<int64_t>{10});
  TenD base = net(VarD::constant(z), temb, nullptr).value();
  TenD z2 = z;
  z2[0] += 0.5;
  TenD moved = net(VarD::constant(z2), temb, nullptr).value();
  double diff = 0;
  for (int64_t i = 0; i < base.numel(); ++i)
    diff = std::max(diff, std::abs(base[i] - moved[i]));
  CHECK(diff > 0.0);
}

TEST_CASE("unet rejects indivisible dims and malformed inputs") {
  nn::ParamStore<double> ps;
  Rng rng(14);
  UNet<double> net(ps, "u", tiny_config(), rng);
  Rng data(15);
  VarD temb = net.timestep_embed()(std::vector<int64_t>{10});
  CHECK_THROWS(net(VarD::constant(randn(data, {1, 2, 15, 16})), temb, nullptr));
  CHECK_THROWS(net(VarD::constant(randn(data, {1, 3, 16, 16})), temb, nullptr));
  VarD z = VarD::constant(randn(data, {1, 2, 16, 16}));
  VarD bad_temb = VarD::constant(randn(data, {1, 9}));
  CHECK_THROWS(net(z, bad_temb, nullptr));
  cond::ConditionTokens<double> bad_ctx{VarD::constant(randn(data, {1, 3, 5}))};
  CHECK_THROWS(net(z, temb, &bad_ctx));
  VarD z2 = VarD::constant(randn(data, {2, 2, 16, 16}));
  VarD temb2 = net.timestep_embed()(std::vector<int64_t>{1, 2});
  cond::ConditionTokens<double> rank2{VarD::constant(randn(data, {3, 6}))};
  CHECK_THROWS(net(z2, temb2, &rank2));
}

TEST_CASE("ten batches reach every parameter and the first step helps") {
  nn::ParamStore<double> ps;
  Rng rng(16);
  UNet<double> net(ps, "u", tiny_config(), rng);
  nn::Adam<double> opt(ps.vars(), 1e-3);
  Rng data(17);
  std::vector<bool> touched(ps.size(), false);
  double first_before = -1, first_after = -1;
  for (int rep = 0; rep < 10; ++rep) {
    TenD z = randn(data, {2, 2, 16, 16});
    TenD eps = randn(data, {2, 2, 16, 16});
    std::vector<int64_t> ts = {1 + data.uniform_int(999), 1 + data.uniform_int(999)};
    cond::ConditionTokens<double> ctx{VarD::constant(randn(data, {2, 3, 6}))};
    const bool with_ctx = rep % 2 == 0;
    auto forward = [&] {
      VarD temb = net.timestep_embed()(ts);
      VarD out = net(VarD::constant(z), temb, with_ctx ? &ctx : nullptr);
      return ag::mse_loss(out, VarD::constant(eps));
    };
    opt.zero_grad();
    VarD loss = forward();
    if (rep == 0) first_before = loss.value()[0];
    loss.backward();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (!ps.var(i).has_grad()) continue;
      const auto& g = ps.var(i).grad();
      for (int64_t j = 0; j < g.numel(); ++j)
        if (g[j] != 0.0) {
          touched[i] = true;
          break;
        }
    }
    opt.step();
    if (rep == 0) {
      ag::NoGradGuard ng;
      first_after = forward().value()[0];
    }
  }
  CHECK(first_after < first_before);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    CAPTURE(ps.name(i));
    CHECK(touched[i]);
  }
}
