// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#include "mst/core/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64) || defined(__i386__)
#define MST_HAVE_AVX2_TU 1
#endif

namespace mst::kernels {

#ifdef MST_HAVE_AVX2_TU
#define MST_DISPATCH(fn, ...) \
  return active_isa() == Isa::avx2 ? avx2::fn(__VA_ARGS__) : ref::fn(__VA_ARGS__)
#else
#define MST_DISPATCH(fn, ...) return ref::fn(__VA_ARGS__)
#endif

void gemm_f32(bool ta, bool tb, int64_t M, int64_t N, int64_t K, float alpha,
              const float* A, int64_t lda, const float* B, int64_t ldb,
              float beta, float* C, int64_t ldc) {
  MST_DISPATCH(gemm_f32, ta, tb, M, N, K, alpha, A, lda, B, ldb, beta, C, ldc);
}
void add_f32(const float* a, const float* b, float* out, int64_t n) {
  MST_DISPATCH(add_f32, a, b, out, n);
}
void sub_f32(const float* a, const float* b, float* out, int64_t n) {
  MST_DISPATCH(sub_f32, a, b, out, n);
}
void mul_f32(const float* a, const float* b, float* out, int64_t n) {
  MST_DISPATCH(mul_f32, a, b, out, n);
}
void fmadd_f32(const float* a, const float* b, float* acc, int64_t n) {
  MST_DISPATCH(fmadd_f32, a, b, acc, n);
}
void axpy_f32(float alpha, const float* x, float* y, int64_t n) {
  MST_DISPATCH(axpy_f32, alpha, x, y, n);
}
void scale_f32(float alpha, float* x, int64_t n) {
  MST_DISPATCH(scale_f32, alpha, x, n);
}
float dot_f32(const float* a, const float* b, int64_t n) {
  MST_DISPATCH(dot_f32, a, b, n);
}
float sum_f32(const float* a, int64_t n) { MST_DISPATCH(sum_f32, a, n); }
float max_f32(const float* a, int64_t n) { MST_DISPATCH(max_f32, a, n); }
float sumsq_f32(const float* a, int64_t n) { MST_DISPATCH(sumsq_f32, a, n); }
void leaky_relu_f32(const float* x, float* out, int64_t n, float slope) {
  MST_DISPATCH(leaky_relu_f32, x, out, n, slope);
}

#undef MST_DISPATCH

}  // namespace mst::kernels
