// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace mst::kernels {

enum class Isa { scalar, avx2 };

// Detected-or-overridden instruction set used by the float32 kernels.
// MST_SIMD=scalar forces the reference path; MST_SIMD=avx2 forces AVX2
// (rejected when the CPU lacks it); anything else auto-detects.
Isa active_isa();
const char* isa_name(Isa isa);
bool cpu_has_avx2_fma();

}  // namespace mst::kernels
