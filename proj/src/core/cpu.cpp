// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#include "mst/core/cpu.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>

#if defined(__x86_64__) || defined(_M_X64) || defined(__i386__)
#include <cpuid.h>
#define MST_X86 1
#endif

namespace mst::kernels {

bool cpu_has_avx2_fma() {
#ifdef MST_X86
  unsigned int eax, ebx, ecx, edx;
  if (!__get_cpuid(1, &eax, &ebx, &ecx, &edx)) return false;
  const bool fma = (ecx & bit_FMA) != 0;
  const bool osxsave = (ecx & bit_OSXSAVE) != 0;
  if (!fma || !osxsave) return false;
  if (!__get_cpuid_count(7, 0, &eax, &ebx, &ecx, &edx)) return false;
  const bool avx2 = (ebx & bit_AVX2) != 0;
  if (!avx2) return false;
  // XCR0: OS must preserve YMM state.
  unsigned int xcr0_lo, xcr0_hi;
  __asm__ volatile("xgetbv" : "=a"(xcr0_lo), "=d"(xcr0_hi) : "c"(0));
  return (xcr0_lo & 0x6) == 0x6;
#else
  return false;
#endif
}

static Isa detect() {
  const char* env = std::getenv("MST_SIMD");
  if (env != nullptr) {
    if (std::strcmp(env, "scalar") == 0) return Isa::scalar;
    if (std::strcmp(env, "avx2") == 0) {
      if (!cpu_has_avx2_fma())
        throw std::runtime_error("MST_SIMD=avx2 requested but CPU lacks AVX2+FMA");
      return Isa::avx2;
    }
  }
  return cpu_has_avx2_fma() ? Isa::avx2 : Isa::scalar;
}

Isa active_isa() {
  static const Isa isa = detect();
  return isa;
}

const char* isa_name(Isa isa) {
  switch (isa) {
    case Isa::avx2:
      return "avx2";
    default:
      return "scalar";
  }
}

}  // namespace mst::kernels
