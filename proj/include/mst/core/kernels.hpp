// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0
//
// Float32 compute kernels with a scalar reference implementation and an
// AVX2+FMA variant selected at runtime (see cpu.hpp). The scalar versions
// are the semantic ground truth; the SIMD versions are equivalence-tested
// against them. Double-precision callers go through the generic templates,
// which always use the scalar path.

#pragma once

#include <cstdint>

#include "mst/core/cpu.hpp"

namespace mst::kernels {

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C.
// op(A) is M x K, op(B) is K x N, C is M x N with leading dimension ldc.
// lda/ldb are the row strides of the *stored* matrices (before transpose).
namespace ref {
void gemm_f32(bool ta, bool tb, int64_t M, int64_t N, int64_t K, float alpha,
              const float* A, int64_t lda, const float* B, int64_t ldb,
              float beta, float* C, int64_t ldc);
void add_f32(const float* a, const float* b, float* out, int64_t n);
void sub_f32(const float* a, const float* b, float* out, int64_t n);
void mul_f32(const float* a, const float* b, float* out, int64_t n);
void fmadd_f32(const float* a, const float* b, float* acc, int64_t n);
void axpy_f32(float alpha, const float* x, float* y, int64_t n);
void scale_f32(float alpha, float* x, int64_t n);
float dot_f32(const float* a, const float* b, int64_t n);
float sum_f32(const float* a, int64_t n);
float max_f32(const float* a, int64_t n);
float sumsq_f32(const float* a, int64_t n);
void leaky_relu_f32(const float* x, float* out, int64_t n, float slope);
}  // namespace ref

namespace avx2 {
void gemm_f32(bool ta, bool tb, int64_t M, int64_t N, int64_t K, float alpha,
              const float* A, int64_t lda, const float* B, int64_t ldb,
              float beta, float* C, int64_t ldc);
void add_f32(const float* a, const float* b, float* out, int64_t n);
void sub_f32(const float* a, const float* b, float* out, int64_t n);
void mul_f32(const float* a, const float* b, float* out, int64_t n);
void fmadd_f32(const float* a, const float* b, float* acc, int64_t n);
void axpy_f32(float alpha, const float* x, float* y, int64_t n);
void scale_f32(float alpha, float* x, int64_t n);
float dot_f32(const float* a, const float* b, int64_t n);
float sum_f32(const float* a, int64_t n);
float max_f32(const float* a, int64_t n);
float sumsq_f32(const float* a, int64_t n);
void leaky_relu_f32(const float* x, float* out, int64_t n, float slope);
}  // namespace avx2

// Dispatched entry points.
void gemm_f32(bool ta, bool tb, int64_t M, int64_t N, int64_t K, float alpha,
              const float* A, int64_t lda, const float* B, int64_t ldb,
              float beta, float* C, int64_t ldc);
void add_f32(const float* a, const float* b, float* out, int64_t n);
void sub_f32(const float* a, const float* b, float* out, int64_t n);
void mul_f32(const float* a, const float* b, float* out, int64_t n);
void fmadd_f32(const float* a, const float* b, float* acc, int64_t n);
void axpy_f32(float alpha, const float* x, float* y, int64_t n);
void scale_f32(float alpha, float* x, int64_t n);
float dot_f32(const float* a, const float* b, int64_t n);
float sum_f32(const float* a, int64_t n);
float max_f32(const float* a, int64_t n);
float sumsq_f32(const float* a, int64_t n);
void leaky_relu_f32(const float* x, float* out, int64_t n, float slope);

// Generic scalar fallbacks for arbitrary precision. The float specialization
// forwards to the dispatched kernels above.
template <typename T>
void gemm(bool ta, bool tb, int64_t M, int64_t N, int64_t K, T alpha,
          const T* A, int64_t lda, const T* B, int64_t ldb, T beta, T* C,
          int64_t ldc) {
  for (int64_t i = 0; i < M; ++i) {
    for (int64_t j = 0; j < N; ++j) {
      T acc = 0;
      for (int64_t k = 0; k < K; ++k) {
        const T a = ta ? A[k * lda + i] : A[i * lda + k];
        const T b = tb ? B[j * ldb + k] : B[k * ldb + j];
        acc += a * b;
      }
      T* c = &C[i * ldc + j];
      *c = alpha * acc + (beta == T(0) ? T(0) : beta * *c);
    }
  }
}

template <>
inline void gemm<float>(bool ta, bool tb, int64_t M, int64_t N, int64_t K,
                        float alpha, const float* A, int64_t lda,
                        const float* B, int64_t ldb, float beta, float* C,
                        int64_t ldc) {
  gemm_f32(ta, tb, M, N, K, alpha, A, lda, B, ldb, beta, C, ldc);
}

}  // namespace mst::kernels
