// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference verification of every autodiff op, in double precision.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "mst/core/adam.hpp"
#include "mst/core/autograd.hpp"
#include "mst/core/nn.hpp"
#include "mst/core/rng.hpp"

using namespace mst;
using ag::Var;

namespace {

using VarD = Var<double>;
using TenD = Tensor<double>;

// Compares analytic gradients of build() against central differences for
// every element of every leaf. build() must reconstruct the graph from the
// current leaf values and return a scalar.
void fd_check(const std::function<VarD()>& build, std::vector<VarD> leaves,
              double tol = 1e-6, double h = 1e-5) {
  for (auto& l : leaves) l.zero_grad();
  VarD loss = build();
  loss.backward();
  std::vector<TenD> analytic;
  for (auto& l : leaves)
    analytic.push_back(l.has_grad() ? l.grad() : TenD(l.value().shape()));
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& l = leaves[li];
    for (int64_t i = 0; i < l.value().numel(); ++i) {
      const double orig = l.value()[i];
      double fp, fm;
      {
        ag::NoGradGuard ng;
        l.value()[i] = orig + h;
        fp = build().value()[0];
        l.value()[i] = orig - h;
        fm = build().value()[0];
      }
      l.value()[i] = orig;
      const double num = (fp - fm) / (2.0 * h);
      const double ana = analytic[li][i];
      CAPTURE(li);
      CAPTURE(i);
      CHECK(std::abs(num - ana) <= tol * std::max(1.0, std::abs(num)));
    }
  }
}

TenD randn(Rng& rng, std::vector<int64_t> shape, double scale = 1.0) {
  TenD t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * scale;
  return t;
}

}  // namespace

TEST_CASE("pointwise ops and reductions") {
  Rng rng(1);
  VarD a = VarD::param(randn(rng, {2, 3}));
  VarD b = VarD::param(randn(rng, {2, 3}));
  fd_check([&] { return ag::mean_all(ag::mul(ag::silu(a), ag::tanh_op(b))); },
           {a, b});
  fd_check([&] { return ag::sum_all(ag::sigmoid(ag::sub(a, b))); }, {a, b});
  fd_check(
      [&] {
        return ag::mean_all(ag::add_scalar(ag::mul_scalar(ag::add(a, b), 0.3), 1.7));
      },
      {a, b});
}

TEST_CASE("leaky relu away from the kink") {
  Rng rng(2);
  TenD init({2, 4});
  for (int64_t i = 0; i < init.numel(); ++i) {
    const double sign = (i % 2 == 0) ? 1.0 : -1.0;
    init[i] = sign * (0.3 + rng.uniform());
  }
  VarD x = VarD::param(init);
  fd_check([&] { return ag::sum_all(ag::leaky_relu(x, 0.2)); }, {x});
}

TEST_CASE("matmul gradients for all transpose combinations") {
  Rng rng(3);
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      const int64_t M = 3, N = 4, K = 2;
      VarD a = VarD::param(randn(rng, ta ? std::vector<int64_t>{K, M}
                                         : std::vector<int64_t>{M, K}));
      VarD b = VarD::param(randn(rng, tb ? std::vector<int64_t>{N, K}
                                         : std::vector<int64_t>{K, N}));
      fd_check([&] { return ag::sum_all(ag::matmul(a, b, ta, tb)); }, {a, b});
    }
}

TEST_CASE("bmm gradients for all transpose combinations") {
  Rng rng(4);
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      const int64_t B = 2, M = 2, N = 3, K = 4;
      VarD a = VarD::param(randn(rng, ta ? std::vector<int64_t>{B, K, M}
                                         : std::vector<int64_t>{B, M, K}));
      VarD b = VarD::param(randn(rng, tb ? std::vector<int64_t>{B, N, K}
                                         : std::vector<int64_t>{B, K, N}));
      // A non-uniform downstream weight catches transposed-gradient mixups.
      VarD w = VarD::constant(randn(rng, {B, M, N}));
      fd_check([&] { return ag::sum_all(ag::mul(ag::bmm(a, b, ta, tb), w)); },
               {a, b});
    }
}

TEST_CASE("linear on rank-2 and rank-3 inputs") {
  Rng rng(5);
  nn::ParamStore<double> ps;
  nn::Linear<double> fc(ps, "fc", 3, 5, rng);
  VarD x2 = VarD::param(randn(rng, {4, 3}));
  fd_check([&] { return ag::mean_all(ag::tanh_op(fc(x2))); }, {x2, fc.w, fc.b});
  VarD x3 = VarD::param(randn(rng, {2, 3, 3}));
  fd_check([&] { return ag::mean_all(fc(x3)); }, {x3, fc.w, fc.b});
}

TEST_CASE("conv2d gradients with stride and padding") {
  Rng rng(6);
  VarD x = VarD::param(randn(rng, {2, 3, 5, 6}));
  VarD w = VarD::param(randn(rng, {4, 3, 3, 3}, 0.5));
  VarD b = VarD::param(randn(rng, {4}));
  fd_check([&] { return ag::mean_all(ag::conv2d(x, w, b, 2, 1)); }, {x, w, b},
           1e-5);
}

TEST_CASE("conv2d_hw with asymmetric stride and a non-square kernel") {
  Rng rng(7);
  VarD x = VarD::param(randn(rng, {1, 2, 4, 7}));
  VarD w = VarD::param(randn(rng, {3, 2, 1, 3}, 0.5));
  VarD b = VarD::param(randn(rng, {3}));
  fd_check([&] { return ag::mean_all(ag::conv2d_hw(x, w, b, 1, 2, 0, 1)); },
           {x, w, b}, 1e-5);
}

TEST_CASE("conv1d gradients") {
  Rng rng(8);
  VarD x = VarD::param(randn(rng, {2, 3, 8}));
  VarD w = VarD::param(randn(rng, {4, 3, 3}, 0.5));
  VarD b = VarD::param(randn(rng, {4}));
  fd_check([&] { return ag::mean_all(ag::conv1d(x, w, b, 2, 1)); }, {x, w, b},
           1e-5);
}

TEST_CASE("group norm gradients for input and affine parameters") {
  Rng rng(9);
  VarD x = VarD::param(randn(rng, {2, 6, 3, 2}));
  VarD gamma = VarD::param(randn(rng, {6}, 0.3));
  VarD beta = VarD::param(randn(rng, {6}, 0.3));
  VarD target = VarD::constant(randn(rng, {2, 6, 3, 2}));
  fd_check(
      [&] { return ag::mse_loss(ag::group_norm(x, gamma, beta, int64_t(3)), target); },
      {x, gamma, beta}, 1e-5);
}

TEST_CASE("softmax over the last dimension") {
  Rng rng(10);
  VarD x = VarD::param(randn(rng, {2, 3, 4}));
  VarD target = VarD::constant(randn(rng, {2, 3, 4}));
  fd_check([&] { return ag::mse_loss(ag::softmax_lastdim(x), target); }, {x});
}

TEST_CASE("attention-shaped composite graph") {
  Rng rng(11);
  const int64_t B = 2, Mq = 3, Mk = 4, d = 4;
  VarD q = VarD::param(randn(rng, {B, Mq, d}));
  VarD k = VarD::param(randn(rng, {B, Mk, d}));
  VarD v = VarD::param(randn(rng, {B, Mk, d}));
  VarD target = VarD::constant(randn(rng, {B, Mq, d}));
  fd_check(
      [&] {
        VarD scores = ag::mul_scalar(ag::bmm(q, k, false, true),
                                     1.0 / std::sqrt(double(d)));
        VarD attn = ag::softmax_lastdim(scores);
        return ag::mse_loss(ag::bmm(attn, v), target);
      },
      {q, k, v}, 1e-5);
}

TEST_CASE("token flatten and unflatten round trip") {
  Rng rng(12);
  VarD x = VarD::param(randn(rng, {2, 3, 2, 4}));
  VarD w = VarD::constant(randn(rng, {2, 8, 3}));
  fd_check([&] { return ag::sum_all(ag::mul(ag::flatten_tokens(x), w)); }, {x});
  fd_check(
      [&] {
        return ag::sum_all(ag::unflatten_tokens(ag::flatten_tokens(x), 2, 4));
      },
      {x});
}

TEST_CASE("concat and slice along axis 1") {
  Rng rng(13);
  VarD a = VarD::param(randn(rng, {2, 3, 2, 2}));
  VarD b = VarD::param(randn(rng, {2, 2, 2, 2}));
  VarD w = VarD::constant(randn(rng, {2, 5, 2, 2}));
  fd_check([&] { return ag::sum_all(ag::mul(ag::concat_axis1(a, b), w)); }, {a, b});
  fd_check([&] { return ag::sum_all(ag::slice_axis1(a, 1, 2)); }, {a});
}

TEST_CASE("upsampling and pooling") {
  Rng rng(14);
  VarD x = VarD::param(randn(rng, {2, 2, 3, 2}));
  VarD w = VarD::constant(randn(rng, {2, 2, 6, 4}));
  fd_check([&] { return ag::sum_all(ag::mul(ag::upsample_nearest2d(x, 2), w)); },
           {x});
  VarD x1 = VarD::param(randn(rng, {2, 3, 4}));
  VarD w1 = VarD::constant(randn(rng, {2, 3, 8}));
  fd_check([&] { return ag::sum_all(ag::mul(ag::upsample_nearest1d(x1, 2), w1)); },
           {x1});
  VarD w2 = VarD::constant(randn(rng, {2, 2}));
  fd_check([&] { return ag::sum_all(ag::mul(ag::global_avg_pool(x), w2)); }, {x});
  VarD w3 = VarD::constant(randn(rng, {2, 2, 1, 2}));
  fd_check([&] { return ag::sum_all(ag::mul(ag::mean_over_height(x), w3)); }, {x});
}

TEST_CASE("trigonometric ops") {
  Rng rng(22);
  VarD x = VarD::param(randn(rng, {3, 4}, 2.0));
  fd_check([&] { return ag::sum_all(ag::mul(ag::sin_op(x), ag::cos_op(x))); }, {x});
  VarD y = ag::sin_op(VarD::constant(TenD::full({2}, 0.0)));
  CHECK(y.value()[0] == 0.0);
  CHECK(ag::cos_op(VarD::constant(TenD::full({2}, 0.0))).value()[1] == 1.0);
}

TEST_CASE("pixel shuffle doubles spatial dims and is a bijection") {
  Rng rng(23);
  VarD x = VarD::param(randn(rng, {2, 8, 2, 3}));
  VarD out = ag::pixel_shuffle2(x);
  REQUIRE(out.value().shape() == std::vector<int64_t>({2, 2, 4, 6}));
  // out[n, c, 2i+di, 2j+dj] == x[n, (di*2+dj)*C + c, i, j]
  const auto& xv = x.value();
  const auto& ov = out.value();
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 3; ++j)
          for (int64_t di = 0; di < 2; ++di)
            for (int64_t dj = 0; dj < 2; ++dj)
              CHECK(ov[((n * 2 + c) * 4 + 2 * i + di) * 6 + 2 * j + dj] ==
                    xv[(((n * 4 + di * 2 + dj) * 2 + c) * 2 + i) * 3 + j]);
  VarD w = VarD::constant(randn(rng, {2, 2, 4, 6}));
  fd_check([&] { return ag::sum_all(ag::mul(ag::pixel_shuffle2(x), w)); }, {x});
  VarD bad = VarD::param(randn(rng, {1, 6, 2, 2}));
  CHECK_THROWS(ag::pixel_shuffle2(bad));
}

TEST_CASE("per-sample channel bias and FiLM modulation") {
  Rng rng(15);
  VarD x = VarD::param(randn(rng, {2, 3, 2, 2}));
  VarD b = VarD::param(randn(rng, {2, 3}));
  VarD w = VarD::constant(randn(rng, {2, 3, 2, 2}));
  fd_check(
      [&] { return ag::sum_all(ag::mul(ag::add_sample_channel_bias(x, b), w)); },
      {x, b});
  VarD gamma = VarD::param(randn(rng, {2, 3}, 0.3));
  VarD xi = VarD::param(randn(rng, {2, 3}, 0.3));
  fd_check(
      [&] {
        return ag::sum_all(ag::mul(ag::scale_shift_channels(x, gamma, xi), w));
      },
      {x, gamma, xi});
}

TEST_CASE("embedding gather accumulates over repeated indices") {
  Rng rng(16);
  VarD table = VarD::param(randn(rng, {5, 3}));
  const std::vector<int64_t> ids = {0, 2, 2, 4, 0, 2};
  VarD w = VarD::constant(randn(rng, {2, 3, 3}));
  fd_check([&] { return ag::sum_all(ag::mul(ag::embedding(table, ids, 2, 3), w)); },
           {table});
}

TEST_CASE("losses") {
  Rng rng(17);
  VarD pred = VarD::param(randn(rng, {3, 4}));
  VarD target = VarD::constant(randn(rng, {3, 4}, 3.0));
  fd_check([&] { return ag::mse_loss(pred, target); }, {pred});
  fd_check([&] { return ag::l1_loss(pred, target); }, {pred});
  const std::vector<int64_t> labels = {1, 3, 0};
  fd_check([&] { return ag::cross_entropy(pred, labels); }, {pred});
}

TEST_CASE("shared subexpressions accumulate gradient") {
  Rng rng(18);
  VarD a = VarD::param(randn(rng, {2, 2}));
  VarD b = VarD::param(randn(rng, {2, 2}));
  fd_check([&] { return ag::sum_all(ag::add(ag::mul(a, a), ag::mul(a, b))); },
           {a, b});
}

TEST_CASE("no-grad mode and detach block the tape") {
  Rng rng(19);
  VarD a = VarD::param(randn(rng, {2, 2}));
  {
    ag::NoGradGuard ng;
    VarD y = ag::sum_all(ag::mul(a, a));
    y.backward();
    CHECK(!a.has_grad());
  }
  VarD y = ag::sum_all(ag::mul(ag::detach(a), a));
  y.backward();
  REQUIRE(a.has_grad());
  // d/da (c * a) with c = detach(a) is just c, not 2a.
  for (int64_t i = 0; i < 4; ++i)
    CHECK(a.grad()[i] == doctest::Approx(a.value()[i]));
}

TEST_CASE("one optimizer step reduces the loss of a small mlp") {
  Rng rng(20);
  nn::ParamStore<double> ps;
  nn::Linear<double> l1(ps, "l1", 4, 8, rng);
  nn::Linear<double> l2(ps, "l2", 8, 1, rng);
  VarD x = VarD::constant(randn(rng, {16, 4}));
  VarD t = VarD::constant(randn(rng, {16, 1}));
  auto forward = [&] { return ag::mse_loss(l2(ag::silu(l1(x))), t); };
  nn::Adam<double> opt(ps.vars(), 1e-3);
  VarD loss0 = forward();
  const double before = loss0.value()[0];
  loss0.backward();
  // Every parameter participates in this graph.
  for (std::size_t i = 0; i < ps.size(); ++i) CHECK(ps.var(i).has_grad());
  opt.step();
  opt.zero_grad();
  {
    ag::NoGradGuard ng;
    CHECK(forward().value()[0] < before);
  }
}

TEST_CASE("adam state is exposed for checkpointing") {
  Rng rng(21);
  nn::ParamStore<double> ps;
  nn::Linear<double> l1(ps, "l1", 2, 2, rng);
  nn::Adam<double> opt(ps.vars(), 1e-2);
  VarD x = VarD::constant(randn(rng, {4, 2}));
  VarD t = VarD::constant(randn(rng, {4, 2}));
  VarD loss = ag::mse_loss(l1(x), t);
  loss.backward();
  opt.step();
  CHECK(opt.step_count() == 1);
  CHECK(opt.moment1(0).numel() == 4);
  CHECK(opt.moment2(0).shape() == ps.var(0).value().shape());
}
