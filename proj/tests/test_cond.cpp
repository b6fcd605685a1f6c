// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <vector>

#include "doctest.h"
#include "mst/cond/conditioning.hpp"
#include "mst/cond/vocabulary.hpp"
#include "mst/core/rng.hpp"

using namespace mst;
using namespace mst::cond;
using VarD = ag::Var<double>;
using TenD = Tensor<double>;

namespace {

TenD randn(Rng& rng, std::vector<int64_t> shape, double scale = 1.0) {
  TenD t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * scale;
  return t;
}

// Double-loop scaled dot-product attention used as the ground truth.
TenD attention_oracle(const TenD& phi, const TenD& ctx, const TenD& wq,
                      const TenD& wk, const TenD& wv) {
  const int64_t N = phi.dim(0), de = phi.dim(1);
  const int64_t M = ctx.dim(0), dt = ctx.dim(1);
  const int64_t d = wq.dim(1);
  auto mm = [](const TenD& a, const TenD& b) {
    TenD o({a.dim(0), b.dim(1)});
    for (int64_t i = 0; i < a.dim(0); ++i)
      for (int64_t j = 0; j < b.dim(1); ++j) {
        double s = 0;
        for (int64_t k = 0; k < a.dim(1); ++k) s += a[i * a.dim(1) + k] * b[k * b.dim(1) + j];
        o[i * b.dim(1) + j] = s;
      }
    return o;
  };
  (void)de;
  (void)dt;
  TenD q = mm(phi, wq), k = mm(ctx, wk), v = mm(ctx, wv);
  TenD out({N, d});
  for (int64_t i = 0; i < N; ++i) {
    std::vector<double> logits(static_cast<std::size_t>(M));
    double mx = -1e300;
    for (int64_t m = 0; m < M; ++m) {
      double s = 0;
      for (int64_t j = 0; j < d; ++j) s += q[i * d + j] * k[m * d + j];
      logits[static_cast<std::size_t>(m)] = s / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, logits[static_cast<std::size_t>(m)]);
    }
    double z = 0;
    for (double& l : logits) {
      l = std::exp(l - mx);
      z += l;
    }
    for (int64_t j = 0; j < d; ++j) {
      double s = 0;
      for (int64_t m = 0; m < M; ++m) s += logits[static_cast<std::size_t>(m)] / z * v[m * d + j];
      out[i * d + j] = s;
    }
  }
  return out;
}

AttentionWeights<double> make_weights(nn::ParamStore<double>& ps, const std::string& n,
                                      int64_t de, int64_t dt, int64_t d, Rng& rng) {
  return AttentionWeights<double>(ps, n, de, dt, d, rng);
}

Vocabulary demo_vocab() {
  Vocabulary v;
  v.add("instrument", "piano");
  v.add("instrument", "violin");
  v.add("genre", "jazz");
  v.add("genre", "classical");
  v.add("composer", "beethoven");
  v.add("composer", "chopin");
  return v;
}

dsp::Spectrogram demo_reference(Rng& rng, int64_t bins, int64_t frames) {
  dsp::Spectrogram s;
  s.magnitude = TenD({bins, frames});
  for (int64_t i = 0; i < s.magnitude.numel(); ++i) s.magnitude[i] = rng.uniform();
  s.scale = dsp::Scale::decibel;
  return s;
}

}  // namespace

TEST_CASE("vocabulary registers and resolves labels") {
  Vocabulary v = demo_vocab();
  CHECK(v.size() == 6);
  CHECK(v.id("instrument", "piano") == 0);
  CHECK(v.id("composer", "chopin") == 5);
  CHECK(v.add("genre", "jazz") == 2);
  CHECK(v.size() == 6);
  CHECK(v.label(3) == "genre:classical");
  CHECK(v.axis(4) == "composer");
  CHECK(v.name(4) == "beethoven");
  CHECK(v.has("genre", "jazz"));
  CHECK_FALSE(v.has("genre", "metal"));
  CHECK_THROWS(v.id("genre", "metal"));
  CHECK_THROWS(v.label(6));
  CHECK_THROWS(v.add("", "x"));
  CHECK_THROWS(v.add("a:b", "x"));
  auto genre = v.ids_for_axis("genre");
  REQUIRE(genre.size() == 2);
  CHECK(genre[0] == 2);
  CHECK(genre[1] == 3);
}

TEST_CASE("vocabulary file round trip keeps ids and format") {
  Vocabulary v = demo_vocab();
  const std::string path = "vocab_test.txt";
  v.save(path);
  Vocabulary w = Vocabulary::load(path);
  REQUIRE(w.size() == v.size());
  for (int64_t i = 0; i < v.size(); ++i) CHECK(w.label(i) == v.label(i));
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  CHECK(line == "instrument:piano");
  is.close();
  std::remove(path.c_str());
  CHECK_THROWS(Vocabulary::parse_label("nocolon"));
  CHECK_THROWS(Vocabulary::parse_label(":x"));
  CHECK_THROWS(Vocabulary::parse_label("x:"));
}

TEST_CASE("single label encodes to one token of width d_tau") {
  Vocabulary v = demo_vocab();
  nn::ParamStore<double> ps;
  Rng rng(1);
  ConditionEncoder<double> enc(ps, "enc", v, {64, 8}, rng);
  StyleCondition c{{v.id("instrument", "piano")}, nullptr};
  auto toks = enc.encode(c);
  REQUIRE(toks.tokens.value().rank() == 2);
  CHECK(toks.count() == 1);
  CHECK(toks.dim() == 64);
}

TEST_CASE("three style axes give three tokens plus reference tokens") {
  Vocabulary v = demo_vocab();
  nn::ParamStore<double> ps;
  Rng rng(2);
  ConditionEncoder<double> enc(ps, "enc", v, {32, 8}, rng);
  StyleCondition c{{v.id("composer", "chopin"), v.id("genre", "jazz"),
                    v.id("instrument", "violin")},
                   nullptr};
  auto toks = enc.encode(c);
  CHECK(toks.count() == 3);
  CHECK(toks.dim() == 32);

  dsp::Spectrogram ref = demo_reference(rng, 48, 64);
  StyleCondition both{c.labels, &ref};
  auto toks2 = enc.encode(both);
  // Three stride-2 stages shrink 64 frames to 8 pooled time tokens.
  CHECK(toks2.count() == 3 + 8);
  // Label rows are unchanged by the added reference tokens.
  for (int64_t i = 0; i < 3 * 32; ++i)
    CHECK(toks2.tokens.value()[i] == toks.tokens.value()[i]);

  StyleCondition ref_only{{}, &ref};
  CHECK(enc.encode(ref_only).count() == 8);
}

TEST_CASE("encoding is deterministic and validates its input") {
  Vocabulary v = demo_vocab();
  nn::ParamStore<double> ps;
  Rng rng(3);
  ConditionEncoder<double> enc(ps, "enc", v, {16, 4}, rng);
  dsp::Spectrogram ref = demo_reference(rng, 40, 40);
  StyleCondition c{{1, 2}, &ref};
  auto a = enc.encode(c);
  auto b = enc.encode(c);
  REQUIRE(a.tokens.value().numel() == b.tokens.value().numel());
  for (int64_t i = 0; i < a.tokens.value().numel(); ++i)
    CHECK(a.tokens.value()[i] == b.tokens.value()[i]);

  CHECK_THROWS(enc.encode(StyleCondition{{}, nullptr}));
  CHECK_THROWS(enc.encode(StyleCondition{{99}, nullptr}));
  CHECK_THROWS(enc.encode(StyleCondition{{-1}, nullptr}));
  // instrument:piano and instrument:violin share an axis.
  CHECK_THROWS(enc.encode(StyleCondition{{0, 1}, nullptr}));
}

TEST_CASE("single context token broadcasts its value row") {
  Rng rng(5);
  nn::ParamStore<double> ps;
  auto w = make_weights(ps, "w", 6, 4, 8, rng);
  VarD phi = VarD::constant(randn(rng, {5, 6}));
  VarD ctx = VarD::constant(randn(rng, {1, 4}));
  TenD out = cross_attention(phi, ctx, w).value();
  TenD v = attention_oracle(phi.value(), ctx.value(), w.wq.value(), w.wk.value(),
                            w.wv.value());
  for (int64_t i = 0; i < 5; ++i)
    for (int64_t j = 0; j < 8; ++j) {
      CHECK(out[i * 8 + j] == doctest::Approx(v[j]).epsilon(1e-9));
      CHECK(out[i * 8 + j] == doctest::Approx(out[j]).epsilon(1e-9));
    }
}

TEST_CASE("zero key projection averages the value rows") {
  Rng rng(7);
  nn::ParamStore<double> ps;
  AttentionWeights<double> w(ps, "w", 6, 4, 8, rng);
  for (int64_t i = 0; i < w.wk.value().numel(); ++i) w.wk.value()[i] = 0.0;
  VarD phi = VarD::constant(randn(rng, {3, 6}));
  VarD ctx = VarD::constant(randn(rng, {7, 4}));
  TenD out = cross_attention(phi, ctx, w).value();
  // V = ctx * wv, uniform softmax yields its column means.
  const TenD& cv = ctx.value();
  const TenD& wv = w.wv.value();
  for (int64_t j = 0; j < 8; ++j) {
    double mean = 0;
    for (int64_t m = 0; m < 7; ++m) {
      double s = 0;
      for (int64_t k = 0; k < 4; ++k) s += cv[m * 4 + k] * wv[k * 8 + j];
      mean += s;
    }
    mean /= 7.0;
    for (int64_t i = 0; i < 3; ++i)
      CHECK(out[i * 8 + j] == doctest::Approx(mean).epsilon(1e-9));
  }
}

TEST_CASE("attention matches the brute force oracle on random instances") {
  Rng rng(11);
  for (int rep = 0; rep < 100; ++rep) {
    const int64_t N = 1 + rng.uniform_int(6);
    const int64_t M = 1 + rng.uniform_int(6);
    const int64_t de = 1 + rng.uniform_int(8);
    const int64_t dt = 1 + rng.uniform_int(8);
    const int64_t d = 1 + rng.uniform_int(8);
    nn::ParamStore<double> ps;
    AttentionWeights<double> w(ps, "w", de, dt, d, rng);
    VarD phi = VarD::constant(randn(rng, {N, de}));
    VarD ctx = VarD::constant(randn(rng, {M, dt}));
    TenD got = cross_attention(phi, ctx, w).value();
    TenD want = attention_oracle(phi.value(), ctx.value(), w.wq.value(),
                                 w.wk.value(), w.wv.value());
    for (int64_t i = 0; i < got.numel(); ++i)
      CHECK(std::abs(got[i] - want[i]) < 1e-6);
  }
}

TEST_CASE("attention rows mix to exactly one part of the context") {
  // With V identically ones, each output entry is a softmax row sum.
  Rng rng(13);
  nn::ParamStore<double> ps;
  AttentionWeights<double> w(ps, "w", 5, 1, 6, rng);
  for (int64_t i = 0; i < w.wv.value().numel(); ++i) w.wv.value()[i] = 1.0;
  VarD phi = VarD::constant(randn(rng, {4, 5}, 3.0));
  VarD ctx = VarD::constant(TenD::full({9, 1}, 1.0));
  TenD out = cross_attention(phi, ctx, w).value();
  for (int64_t i = 0; i < out.numel(); ++i)
    CHECK(std::abs(out[i] - 1.0) < 1e-6);
}

TEST_CASE("permuting context tokens leaves attention unchanged") {
  Rng rng(17);
  nn::ParamStore<double> ps;
  AttentionWeights<double> w(ps, "w", 6, 4, 8, rng);
  VarD phi = VarD::constant(randn(rng, {5, 6}));
  TenD ctx = randn(rng, {7, 4});
  TenD perm({7, 4});
  const int64_t order[7] = {3, 0, 6, 1, 5, 2, 4};
  for (int64_t m = 0; m < 7; ++m)
    for (int64_t k = 0; k < 4; ++k) perm[m * 4 + k] = ctx[order[m] * 4 + k];
  TenD a = cross_attention(phi, VarD::constant(ctx), w).value();
  TenD b = cross_attention(phi, VarD::constant(perm), w).value();
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-6);
}

TEST_CASE("per row logit shifts do not change attention") {
  // Appending an all-ones context column with key row u and zero value row
  // adds phi*wq . u to every logit of a row, a pure softmax shift.
  Rng rng(19);
  nn::ParamStore<double> ps;
  AttentionWeights<double> w(ps, "w", 6, 4, 8, rng);
  VarD phi = VarD::constant(randn(rng, {5, 6}));
  TenD ctx = randn(rng, {7, 4});

  TenD ctx2({7, 5});
  for (int64_t m = 0; m < 7; ++m) {
    for (int64_t k = 0; k < 4; ++k) ctx2[m * 5 + k] = ctx[m * 4 + k];
    ctx2[m * 5 + 4] = 1.0;
  }
  nn::ParamStore<double> ps2;
  AttentionWeights<double> w2(ps2, "w", 6, 5, 8, rng);
  for (int64_t i = 0; i < w.wq.value().numel(); ++i) w2.wq.value()[i] = w.wq.value()[i];
  TenD u = randn(rng, {8}, 2.0);
  for (int64_t k = 0; k < 4; ++k)
    for (int64_t j = 0; j < 8; ++j) {
      w2.wk.value()[k * 8 + j] = w.wk.value()[k * 8 + j];
      w2.wv.value()[k * 8 + j] = w.wv.value()[k * 8 + j];
    }
  for (int64_t j = 0; j < 8; ++j) {
    w2.wk.value()[4 * 8 + j] = u[j];
    w2.wv.value()[4 * 8 + j] = 0.0;
  }
  TenD a = cross_attention(phi, VarD::constant(ctx), w).value();
  TenD b = cross_attention(phi, VarD::constant(ctx2), w2).value();
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-6);
}

TEST_CASE("batched attention equals stacked per sample attention") {
  Rng rng(23);
  nn::ParamStore<double> ps;
  AttentionWeights<double> w(ps, "w", 6, 4, 8, rng);
  const int64_t B = 3, N = 5, M = 4;
  TenD phi = randn(rng, {B, N, 6});
  TenD ctx = randn(rng, {B, M, 4});
  TenD batched = cross_attention(VarD::constant(phi), VarD::constant(ctx), w).value();
  REQUIRE(batched.dim(0) == B);
  for (int64_t b = 0; b < B; ++b) {
    TenD p({N, 6}), c({M, 4});
    std::copy(phi.data() + b * N * 6, phi.data() + (b + 1) * N * 6, p.data());
    std::copy(ctx.data() + b * M * 4, ctx.data() + (b + 1) * M * 4, c.data());
    TenD one = cross_attention(VarD::constant(p), VarD::constant(c), w).value();
    for (int64_t i = 0; i < N * 8; ++i)
      CHECK(batched[b * N * 8 + i] == doctest::Approx(one[i]).epsilon(1e-12));
  }
}

TEST_CASE("attention rejects inconsistent shapes") {
  Rng rng(29);
  nn::ParamStore<double> ps;
  AttentionWeights<double> w(ps, "w", 6, 4, 8, rng);
  VarD phi = VarD::constant(randn(rng, {5, 7}));
  VarD ctx = VarD::constant(randn(rng, {3, 4}));
  CHECK_THROWS(cross_attention(phi, ctx, w));
  VarD phi2 = VarD::constant(randn(rng, {5, 6}));
  VarD ctx2 = VarD::constant(randn(rng, {3, 5}));
  CHECK_THROWS(cross_attention(phi2, ctx2, w));
  VarD ctx3 = VarD::constant(randn(rng, {2, 3, 4}));
  CHECK_THROWS(cross_attention(phi2, ctx3, w));
}

TEST_CASE("conditional loss is zero at the target and reduces to plain mse") {
  Rng rng(31);
  TenD e = randn(rng, {4, 5});
  VarD eh = VarD::constant(e);
  CHECK(conditional_loss(eh, VarD::constant(e)).value()[0] == 0.0);
  TenD f = randn(rng, {4, 5});
  double oracle = 0;
  for (int64_t i = 0; i < e.numel(); ++i) oracle += (f[i] - e[i]) * (f[i] - e[i]);
  oracle /= e.numel();
  CHECK(conditional_loss(VarD::constant(f), VarD::constant(e)).value()[0] ==
        doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("loss gradients reach the embedding table and projections") {
  Vocabulary v = demo_vocab();
  nn::ParamStore<double> ps;
  Rng rng(37);
  ConditionEncoder<double> enc(ps, "enc", v, {6, 4}, rng);
  AttentionWeights<double> w(ps, "attn", 5, 6, 6, rng);
  TenD phi = randn(rng, {3, 5});
  TenD eps = randn(rng, {3, 6});
  dsp::Spectrogram ref = demo_reference(rng, 24, 16);

  auto build = [&] {
    StyleCondition c{{v.id("genre", "jazz")}, &ref};
    auto toks = enc.encode(c);
    VarD out = cross_attention(VarD::constant(phi), toks.tokens, w);
    return conditional_loss(out, VarD::constant(eps));
  };
  ps.zero_grad();
  VarD loss = build();
  loss.backward();
  CHECK(ps.get("enc.labels.table").has_grad());
  CHECK(ps.get("enc.ref1.w").has_grad());
  CHECK(ps.get("attn.wq").has_grad());
  double table_norm = 0;
  const TenD& tg = ps.get("enc.labels.table").grad();
  for (int64_t i = 0; i < tg.numel(); ++i) table_norm += tg[i] * tg[i];
  CHECK(table_norm > 0.0);

  // Finite differences against the analytic table gradient.
  VarD table = ps.get("enc.labels.table");
  const int64_t row = v.id("genre", "jazz");
  for (int64_t j = 0; j < 3; ++j) {
    const int64_t idx = row * 6 + j;
    const double orig = table.value()[idx];
    double fp, fm;
    {
      ag::NoGradGuard ng;
      table.value()[idx] = orig + 1e-5;
      fp = build().value()[0];
      table.value()[idx] = orig - 1e-5;
      fm = build().value()[0];
    }
    table.value()[idx] = orig;
    const double num = (fp - fm) / 2e-5;
    CHECK(std::abs(num - tg[idx]) <= 1e-4 * std::max(1.0, std::abs(num)));
  }
}

TEST_CASE("batch encoding matches per sample encoding") {
  Vocabulary v = demo_vocab();
  nn::ParamStore<double> ps;
  Rng rng(41);
  ConditionEncoder<double> enc(ps, "enc", v, {8, 4}, rng);
  std::vector<int64_t> ids = {0, 2, 1, 3, 0, 5};  // 3 samples x 2 axes
  auto batch = enc.encode_batch(ids, 3, 2);
  REQUIRE(batch.tokens.value().rank() == 3);
  CHECK(batch.tokens.value().dim(0) == 3);
  CHECK(batch.count() == 2);
  for (int64_t b = 0; b < 3; ++b) {
    StyleCondition c{{ids[b * 2], ids[b * 2 + 1]}, nullptr};
    auto one = enc.encode(c);
    for (int64_t i = 0; i < 2 * 8; ++i)
      CHECK(batch.tokens.value()[b * 2 * 8 + i] == one.tokens.value()[i]);
  }
  CHECK_THROWS(enc.encode_batch({99}, 1, 1));
}

TEST_CASE("token substitution swaps whole samples and routes gradients") {
  Rng rng(43);
  VarD ctx = VarD::param(randn(rng, {3, 2, 4}));
  VarD null_row = VarD::param(randn(rng, {1, 4}));
  std::vector<char> dropped = {0, 1, 0};
  VarD out = substitute_tokens(ctx, null_row, dropped);
  REQUIRE(out.value().shape() == ctx.value().shape());
  for (int64_t m = 0; m < 2; ++m)
    for (int64_t j = 0; j < 4; ++j) {
      CHECK(out.value()[(0 * 2 + m) * 4 + j] == ctx.value()[(0 * 2 + m) * 4 + j]);
      CHECK(out.value()[(1 * 2 + m) * 4 + j] == null_row.value()[j]);
      CHECK(out.value()[(2 * 2 + m) * 4 + j] == ctx.value()[(2 * 2 + m) * 4 + j]);
    }
  ag::sum_all(out).backward();
  REQUIRE(ctx.has_grad());
  REQUIRE(null_row.has_grad());
  for (int64_t m = 0; m < 2; ++m)
    for (int64_t j = 0; j < 4; ++j) {
      CHECK(ctx.grad()[(0 * 2 + m) * 4 + j] == 1.0);
      CHECK(ctx.grad()[(1 * 2 + m) * 4 + j] == 0.0);
      CHECK(ctx.grad()[(2 * 2 + m) * 4 + j] == 1.0);
    }
  // Each dropped sample contributes M = 2 copies of the null row.
  for (int64_t j = 0; j < 4; ++j) CHECK(null_row.grad()[j] == 2.0);

  CHECK_THROWS(substitute_tokens(ctx, null_row, {0, 1}));
  VarD wide = VarD::param(randn(rng, {1, 5}));
  CHECK_THROWS(substitute_tokens(ctx, wide, dropped));
}

TEST_CASE("condition dropout hits the configured rate") {
  Rng rng(47);
  VarD null_row = VarD::constant(randn(rng, {1, 4}));
  const int64_t B = 2000;
  VarD ctx = VarD::constant(randn(rng, {B, 1, 4}));
  Rng drop_rng(53);
  VarD out = dropout_condition(ctx, null_row, drop_rng, 0.1);
  int64_t dropped = 0;
  for (int64_t b = 0; b < B; ++b) {
    bool is_null = true;
    for (int64_t j = 0; j < 4; ++j)
      is_null = is_null && out.value()[b * 4 + j] == null_row.value()[j];
    dropped += is_null ? 1 : 0;
  }
  const double rate = static_cast<double>(dropped) / static_cast<double>(B);
  CHECK(rate > 0.07);
  CHECK(rate < 0.13);

  // Zero rate keeps every row intact.
  VarD keep = dropout_condition(ctx, null_row, drop_rng, 0.0);
  for (int64_t i = 0; i < keep.value().numel(); ++i)
    CHECK(keep.value()[i] == ctx.value()[i]);
}
