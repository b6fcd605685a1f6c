// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "mst/core/cpu.hpp"
#include "mst/core/kernels.hpp"
#include "mst/core/rng.hpp"
#include "mst/core/tensor.hpp"

using namespace mst;
using namespace mst::kernels;

namespace {

// Naive reference with double accumulation.
void gemm_oracle(bool ta, bool tb, int64_t M, int64_t N, int64_t K, float alpha,
                 const float* A, int64_t lda, const float* B, int64_t ldb,
                 float beta, double* C, int64_t ldc) {
  for (int64_t i = 0; i < M; ++i) {
    for (int64_t j = 0; j < N; ++j) {
      double acc = 0;
      for (int64_t k = 0; k < K; ++k) {
        const float a = ta ? A[k * lda + i] : A[i * lda + k];
        const float b = tb ? B[j * ldb + k] : B[k * ldb + j];
        acc += static_cast<double>(a) * b;
      }
      C[i * ldc + j] = static_cast<double>(alpha) * acc + static_cast<double>(beta) * C[i * ldc + j];
    }
  }
}

void fill_uniform(Rng& rng, std::vector<float>& v) {
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
}

}  // namespace

TEST_CASE("gemm matches naive oracle across shapes and transposes") {
  Rng rng(42);
  const int64_t sizes[] = {1, 2, 3, 6, 7, 16, 17, 33, 64, 100};
  for (int64_t M : {int64_t(1), int64_t(6), int64_t(7), int64_t(33), int64_t(100)}) {
    for (int64_t N : {int64_t(1), int64_t(16), int64_t(17), int64_t(64)}) {
      for (int64_t K : {int64_t(1), int64_t(8), int64_t(33), int64_t(257)}) {
        for (int ta = 0; ta < 2; ++ta) {
          for (int tb = 0; tb < 2; ++tb) {
            const int64_t lda = ta ? M : K;
            const int64_t ldb = tb ? K : N;
            std::vector<float> A(static_cast<std::size_t>((ta ? K : M) * lda));
            std::vector<float> B(static_cast<std::size_t>((tb ? N : K) * ldb));
            std::vector<float> C(static_cast<std::size_t>(M * N));
            fill_uniform(rng, A);
            fill_uniform(rng, B);
            fill_uniform(rng, C);
            std::vector<double> ref(C.begin(), C.end());
            const float alpha = 1.5f, beta = 0.5f;
            gemm_oracle(ta, tb, M, N, K, alpha, A.data(), lda, B.data(), ldb,
                        beta, ref.data(), N);
            kernels::gemm_f32(ta, tb, M, N, K, alpha, A.data(), lda, B.data(),
                              ldb, beta, C.data(), N);
            double worst = 0;
            for (std::size_t i = 0; i < C.size(); ++i) {
              const double err =
                  std::abs(C[i] - ref[i]) / (1.0 + std::abs(ref[i]));
              worst = std::max(worst, err);
            }
            CAPTURE(M);
            CAPTURE(N);
            CAPTURE(K);
            CAPTURE(ta);
            CAPTURE(tb);
            CHECK(worst < 1e-4);
          }
        }
      }
    }
  }
  (void)sizes;
}

TEST_CASE("gemm handles alpha=1 beta=0 and beta=1 accumulation") {
  Rng rng(7);
  const int64_t M = 23, N = 31, K = 41;
  std::vector<float> A(M * K), B(K * N), C(M * N, 0.0f), C2(M * N);
  fill_uniform(rng, A);
  fill_uniform(rng, B);
  kernels::gemm_f32(false, false, M, N, K, 1.0f, A.data(), K, B.data(), N, 0.0f,
                    C.data(), N);
  // Two half-strength accumulations equal one full pass.
  std::fill(C2.begin(), C2.end(), 0.0f);
  kernels::gemm_f32(false, false, M, N, K, 0.5f, A.data(), K, B.data(), N, 1.0f,
                    C2.data(), N);
  kernels::gemm_f32(false, false, M, N, K, 0.5f, A.data(), K, B.data(), N, 1.0f,
                    C2.data(), N);
  for (std::size_t i = 0; i < C.size(); ++i)
    CHECK(C2[i] == doctest::Approx(C[i]).epsilon(1e-5));
}

TEST_CASE("generic gemm<double> matches oracle") {
  Rng rng(11);
  const int64_t M = 19, N = 21, K = 37;
  std::vector<double> A(M * K), B(K * N), C(M * N, 1.0), ref(M * N, 1.0);
  for (auto& x : A) x = rng.uniform(-1.0, 1.0);
  for (auto& x : B) x = rng.uniform(-1.0, 1.0);
  kernels::gemm<double>(false, true, M, N, K, 2.0, A.data(), K, B.data(), K, 3.0,
                        C.data(), N);
  for (int64_t i = 0; i < M; ++i)
    for (int64_t j = 0; j < N; ++j) {
      double acc = 0;
      for (int64_t k = 0; k < K; ++k) acc += A[i * K + k] * B[j * K + k];
      ref[i * N + j] = 2.0 * acc + 3.0 * ref[i * N + j];
    }
  for (std::size_t i = 0; i < C.size(); ++i)
    CHECK(C[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("active ISA reports a known name") {
  const char* name = isa_name(active_isa());
  CHECK((std::string(name) == "scalar" || std::string(name) == "avx2"));
  MESSAGE("active ISA: ", name);
}

#if defined(__x86_64__) || defined(_M_X64)
TEST_CASE("avx2 kernels agree with scalar reference") {
  if (!cpu_has_avx2_fma()) {
    MESSAGE("AVX2+FMA not available; skipping equivalence checks");
    return;
  }
  Rng rng(123);
  const int64_t n = 1051;  // odd length exercises the scalar tail
  std::vector<float> a(n), b(n), c(n), o1(n), o2(n);
  fill_uniform(rng, a);
  fill_uniform(rng, b);
  fill_uniform(rng, c);

  SUBCASE("elementwise ops are bit-identical") {
    ref::add_f32(a.data(), b.data(), o1.data(), n);
    avx2::add_f32(a.data(), b.data(), o2.data(), n);
    CHECK(o1 == o2);
    ref::sub_f32(a.data(), b.data(), o1.data(), n);
    avx2::sub_f32(a.data(), b.data(), o2.data(), n);
    CHECK(o1 == o2);
    ref::mul_f32(a.data(), b.data(), o1.data(), n);
    avx2::mul_f32(a.data(), b.data(), o2.data(), n);
    CHECK(o1 == o2);
    o1 = a;
    o2 = a;
    ref::scale_f32(0.37f, o1.data(), n);
    avx2::scale_f32(0.37f, o2.data(), n);
    CHECK(o1 == o2);
    ref::leaky_relu_f32(a.data(), o1.data(), n, 0.2f);
    avx2::leaky_relu_f32(a.data(), o2.data(), n, 0.2f);
    CHECK(o1 == o2);
  }

  SUBCASE("fused and reduction ops agree within rounding") {
    o1 = c;
    o2 = c;
    ref::fmadd_f32(a.data(), b.data(), o1.data(), n);
    avx2::fmadd_f32(a.data(), b.data(), o2.data(), n);
    for (int64_t i = 0; i < n; ++i)
      CHECK(o1[i] == doctest::Approx(o2[i]).epsilon(1e-6));

    std::vector<float> y1(c), y2(c);
    ref::axpy_f32(0.77f, a.data(), y1.data(), n);
    avx2::axpy_f32(0.77f, a.data(), y2.data(), n);
    for (int64_t i = 0; i < n; ++i)
      CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-6));

    CHECK(ref::dot_f32(a.data(), b.data(), n) ==
          doctest::Approx(avx2::dot_f32(a.data(), b.data(), n)).epsilon(1e-5));
    CHECK(ref::sum_f32(a.data(), n) ==
          doctest::Approx(avx2::sum_f32(a.data(), n)).epsilon(1e-4));
    CHECK(ref::sumsq_f32(a.data(), n) ==
          doctest::Approx(avx2::sumsq_f32(a.data(), n)).epsilon(1e-5));
    CHECK(ref::max_f32(a.data(), n) == avx2::max_f32(a.data(), n));
  }

  SUBCASE("gemm agrees within accumulation tolerance") {
    const int64_t M = 37, N = 53, K = 129;
    std::vector<float> A(M * K), B(K * N), C1(M * N), C2(M * N);
    fill_uniform(rng, A);
    fill_uniform(rng, B);
    fill_uniform(rng, C1);
    C2 = C1;
    for (int ta = 0; ta < 2; ++ta)
      for (int tb = 0; tb < 2; ++tb) {
        const int64_t lda = ta ? M : K;
        const int64_t ldb = tb ? K : N;
        std::vector<float> At(static_cast<std::size_t>((ta ? K : M) * lda));
        std::vector<float> Bt(static_cast<std::size_t>((tb ? N : K) * ldb));
        fill_uniform(rng, At);
        fill_uniform(rng, Bt);
        ref::gemm_f32(ta, tb, M, N, K, 1.0f, At.data(), lda, Bt.data(), ldb,
                      0.0f, C1.data(), N);
        avx2::gemm_f32(ta, tb, M, N, K, 1.0f, At.data(), lda, Bt.data(), ldb,
                       0.0f, C2.data(), N);
        for (std::size_t i = 0; i < C1.size(); ++i)
          CHECK(C1[i] == doctest::Approx(C2[i]).epsilon(2e-5));
      }
  }
}
#endif

TEST_CASE("rng is deterministic and serializable") {
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
  std::string state = a.serialize();
  const double next = a.normal();
  Rng c(1);
  c.deserialize(state);
  CHECK(c.normal() == next);
  CHECK(derive_seed(99, 1) != derive_seed(99, 2));
  CHECK(derive_seed(99, 1) == derive_seed(99, 1));
}

TEST_CASE("rng normal moments are sane") {
  Rng rng(2024);
  const int n = 200000;
  double sum = 0, sumsq = 0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("tensor shapes and indexing") {
  TensorF t({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.rank() == 3);
  t.at(1, 2, 3) = 5.0f;
  CHECK(t[23] == 5.0f);
  TensorF r = t.reshaped({4, 6});
  CHECK(r.at(3, 5) == 5.0f);
  CHECK_THROWS(t.reshaped({5, 5}));
  TensorF z = TensorF::zeros({3});
  CHECK(z[0] == 0.0f);
  CHECK(z[2] == 0.0f);
}
