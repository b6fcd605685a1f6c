// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0
//
// AVX2+FMA kernel variants. This translation unit is built with
// -mavx2 -mfma; nothing here runs unless the dispatcher has verified the
// CPU supports both (see cpu.cpp), so the intrinsics are safe.

#include "mst/core/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64) || defined(__i386__)

#include <immintrin.h>

#include <algorithm>
#include <vector>

#include "mst/core/tensor.hpp"

namespace mst::kernels::avx2 {

namespace {

constexpr int64_t MR = 6;
constexpr int64_t NR = 16;
constexpr int64_t KC = 256;
constexpr int64_t MC = 72;    // multiple of MR
constexpr int64_t NC = 1024;  // multiple of NR

inline float at(const float* M, int64_t ld, bool trans, int64_t r, int64_t c) {
  return trans ? M[c * ld + r] : M[r * ld + c];
}

// Packs a kc x NR column slab of op(B) at (pc, jc+jp*NR), zero-padded on the
// right edge.
void pack_b_panel(const float* B, int64_t ldb, bool tb, int64_t pc, int64_t j0,
                  int64_t kc, int64_t nr, float* out) {
  for (int64_t k = 0; k < kc; ++k) {
    for (int64_t c = 0; c < nr; ++c) out[k * NR + c] = at(B, ldb, tb, pc + k, j0 + c);
    for (int64_t c = nr; c < NR; ++c) out[k * NR + c] = 0.0f;
  }
}

// Packs an mr x kc row slab of op(A) at (i0, pc), zero-padded on the bottom.
void pack_a_panel(const float* A, int64_t lda, bool ta, int64_t i0, int64_t pc,
                  int64_t kc, int64_t mr, float* out) {
  for (int64_t k = 0; k < kc; ++k) {
    for (int64_t r = 0; r < mr; ++r) out[k * MR + r] = at(A, lda, ta, i0 + r, pc + k);
    for (int64_t r = mr; r < MR; ++r) out[k * MR + r] = 0.0f;
  }
}

// 6x16 FMA microkernel: tile = Apanel * Bpanel over kc.
void micro_6x16(int64_t kc, const float* ap, const float* bp, float* tile) {
  __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
  __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
  __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
  __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
  __m256 c40 = _mm256_setzero_ps(), c41 = _mm256_setzero_ps();
  __m256 c50 = _mm256_setzero_ps(), c51 = _mm256_setzero_ps();
  for (int64_t k = 0; k < kc; ++k) {
    const __m256 b0 = _mm256_loadu_ps(bp + k * NR);
    const __m256 b1 = _mm256_loadu_ps(bp + k * NR + 8);
    const float* a = ap + k * MR;
    __m256 av;
    av = _mm256_broadcast_ss(a + 0);
    c00 = _mm256_fmadd_ps(av, b0, c00);
    c01 = _mm256_fmadd_ps(av, b1, c01);
    av = _mm256_broadcast_ss(a + 1);
    c10 = _mm256_fmadd_ps(av, b0, c10);
    c11 = _mm256_fmadd_ps(av, b1, c11);
    av = _mm256_broadcast_ss(a + 2);
    c20 = _mm256_fmadd_ps(av, b0, c20);
    c21 = _mm256_fmadd_ps(av, b1, c21);
    av = _mm256_broadcast_ss(a + 3);
    c30 = _mm256_fmadd_ps(av, b0, c30);
    c31 = _mm256_fmadd_ps(av, b1, c31);
    av = _mm256_broadcast_ss(a + 4);
    c40 = _mm256_fmadd_ps(av, b0, c40);
    c41 = _mm256_fmadd_ps(av, b1, c41);
    av = _mm256_broadcast_ss(a + 5);
    c50 = _mm256_fmadd_ps(av, b0, c50);
    c51 = _mm256_fmadd_ps(av, b1, c51);
  }
  _mm256_storeu_ps(tile + 0 * NR, c00);
  _mm256_storeu_ps(tile + 0 * NR + 8, c01);
  _mm256_storeu_ps(tile + 1 * NR, c10);
  _mm256_storeu_ps(tile + 1 * NR + 8, c11);
  _mm256_storeu_ps(tile + 2 * NR, c20);
  _mm256_storeu_ps(tile + 2 * NR + 8, c21);
  _mm256_storeu_ps(tile + 3 * NR, c30);
  _mm256_storeu_ps(tile + 3 * NR + 8, c31);
  _mm256_storeu_ps(tile + 4 * NR, c40);
  _mm256_storeu_ps(tile + 4 * NR + 8, c41);
  _mm256_storeu_ps(tile + 5 * NR, c50);
  _mm256_storeu_ps(tile + 5 * NR + 8, c51);
}

}  // namespace

void gemm_f32(bool ta, bool tb, int64_t M, int64_t N, int64_t K, float alpha,
              const float* A, int64_t lda, const float* B, int64_t ldb,
              float beta, float* C, int64_t ldc) {
  if (M == 0 || N == 0) return;
  if (K == 0 || alpha == 0.0f) {
    for (int64_t i = 0; i < M; ++i) {
      float* c = C + i * ldc;
      if (beta == 0.0f)
        std::fill(c, c + N, 0.0f);
      else if (beta != 1.0f)
        for (int64_t j = 0; j < N; ++j) c[j] *= beta;
    }
    return;
  }

  thread_local std::vector<float, mst::AlignedAllocator<float>> packed_a;
  thread_local std::vector<float, mst::AlignedAllocator<float>> packed_b;
  packed_a.resize(static_cast<std::size_t>(MC * KC));
  packed_b.resize(static_cast<std::size_t>(KC * NC));
  alignas(64) float tile[MR * NR];

  for (int64_t jc = 0; jc < N; jc += NC) {
    const int64_t nc = std::min(NC, N - jc);
    for (int64_t pc = 0; pc < K; pc += KC) {
      const int64_t kc = std::min(KC, K - pc);
      const bool first_k = (pc == 0);
      const int64_t n_panels = (nc + NR - 1) / NR;
      for (int64_t jp = 0; jp < n_panels; ++jp) {
        const int64_t j0 = jc + jp * NR;
        pack_b_panel(B, ldb, tb, pc, j0, kc, std::min(NR, N - j0),
                     packed_b.data() + jp * KC * NR);
      }
      for (int64_t ic = 0; ic < M; ic += MC) {
        const int64_t mc = std::min(MC, M - ic);
        const int64_t m_panels = (mc + MR - 1) / MR;
        for (int64_t ip = 0; ip < m_panels; ++ip) {
          const int64_t i0 = ic + ip * MR;
          pack_a_panel(A, lda, ta, i0, pc, kc, std::min(MR, M - i0),
                       packed_a.data() + ip * KC * MR);
        }
        for (int64_t jp = 0; jp < n_panels; ++jp) {
          const int64_t j0 = jc + jp * NR;
          const int64_t nr = std::min(NR, N - j0);
          for (int64_t ip = 0; ip < m_panels; ++ip) {
            const int64_t i0 = ic + ip * MR;
            const int64_t mr = std::min(MR, M - i0);
            micro_6x16(kc, packed_a.data() + ip * KC * MR,
                       packed_b.data() + jp * KC * NR, tile);
            for (int64_t r = 0; r < mr; ++r) {
              float* c = C + (i0 + r) * ldc + j0;
              const float* t = tile + r * NR;
              if (first_k) {
                if (beta == 0.0f)
                  for (int64_t q = 0; q < nr; ++q) c[q] = alpha * t[q];
                else
                  for (int64_t q = 0; q < nr; ++q) c[q] = alpha * t[q] + beta * c[q];
              } else {
                for (int64_t q = 0; q < nr; ++q) c[q] += alpha * t[q];
              }
            }
          }
        }
      }
    }
  }
}

void add_f32(const float* a, const float* b, float* out, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_f32(const float* a, const float* b, float* out, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_f32(const float* a, const float* b, float* out, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void fmadd_f32(const float* a, const float* b, float* acc, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(acc + i, _mm256_fmadd_ps(_mm256_loadu_ps(a + i),
                                              _mm256_loadu_ps(b + i),
                                              _mm256_loadu_ps(acc + i)));
  for (; i < n; ++i) acc[i] += a[i] * b[i];
}

void axpy_f32(float alpha, const float* x, float* y, int64_t n) {
  const __m256 av = _mm256_set1_ps(alpha);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_f32(float alpha, float* x, int64_t n) {
  const __m256 av = _mm256_set1_ps(alpha);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(x + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) x[i] *= alpha;
}

namespace {
inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  return _mm_cvtss_f32(lo);
}
}  // namespace

float dot_f32(const float* a, const float* b, int64_t n) {
  __m256 acc = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
  float r = hsum(acc);
  for (; i < n; ++i) r += a[i] * b[i];
  return r;
}

float sum_f32(const float* a, int64_t n) {
  __m256 acc = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(a + i));
  float r = hsum(acc);
  for (; i < n; ++i) r += a[i];
  return r;
}

float max_f32(const float* a, int64_t n) {
  float m = a[0];
  int64_t i = 0;
  if (n >= 8) {
    __m256 mv = _mm256_loadu_ps(a);
    for (i = 8; i + 8 <= n; i += 8) mv = _mm256_max_ps(mv, _mm256_loadu_ps(a + i));
    alignas(32) float lane[8];
    _mm256_store_ps(lane, mv);
    for (float v : lane) m = v > m ? v : m;
  }
  for (; i < n; ++i) m = a[i] > m ? a[i] : m;
  return m;
}

float sumsq_f32(const float* a, int64_t n) {
  __m256 acc = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(a + i);
    acc = _mm256_fmadd_ps(v, v, acc);
  }
  float r = hsum(acc);
  for (; i < n; ++i) r += a[i] * a[i];
  return r;
}

void leaky_relu_f32(const float* x, float* out, int64_t n, float slope) {
  const __m256 sv = _mm256_set1_ps(slope);
  const __m256 zero = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256 neg = _mm256_mul_ps(v, sv);
    const __m256 mask = _mm256_cmp_ps(v, zero, _CMP_GT_OQ);
    _mm256_storeu_ps(out + i, _mm256_blendv_ps(neg, v, mask));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : slope * x[i];
}

}  // namespace mst::kernels::avx2

#endif  // x86
