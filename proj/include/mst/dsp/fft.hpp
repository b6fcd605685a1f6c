// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <complex>
#include <cstdint>
#include <vector>

namespace mst::dsp {

// In-place iterative radix-2 FFT. Size must be a power of two.
// The inverse transform includes the 1/n scaling.
void fft(std::vector<std::complex<double>>& a, bool inverse);

// Real-input FFT: returns bins 0..n/2 of the length-n transform.
// x may be shorter than n; the tail is treated as zeros.
std::vector<std::complex<double>> rfft(const double* x, int64_t len, int64_t n);

// Inverse of rfft: reconstructs the length-n real signal from n/2+1 bins.
std::vector<double> irfft(const std::vector<std::complex<double>>& bins, int64_t n);

}  // namespace mst::dsp
