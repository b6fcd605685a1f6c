// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#include "mst/dsp/fft.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mst::dsp {

void fft(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft: size must be a nonzero power of two");

  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }

  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang =
        2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }

  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= inv;
  }
}

std::vector<std::complex<double>> rfft(const double* x, int64_t len, int64_t n) {
  if (len > n) throw std::invalid_argument("rfft: input longer than transform");
  std::vector<std::complex<double>> a(static_cast<std::size_t>(n));
  for (int64_t i = 0; i < len; ++i) a[static_cast<std::size_t>(i)] = x[i];
  fft(a, false);
  a.resize(static_cast<std::size_t>(n / 2 + 1));
  return a;
}

std::vector<double> irfft(const std::vector<std::complex<double>>& bins, int64_t n) {
  if (static_cast<int64_t>(bins.size()) != n / 2 + 1)
    throw std::invalid_argument("irfft: bin count must be n/2+1");
  std::vector<std::complex<double>> a(static_cast<std::size_t>(n));
  for (int64_t k = 0; k <= n / 2; ++k) a[static_cast<std::size_t>(k)] = bins[static_cast<std::size_t>(k)];
  for (int64_t k = n / 2 + 1; k < n; ++k)
    a[static_cast<std::size_t>(k)] = std::conj(bins[static_cast<std::size_t>(n - k)]);
  fft(a, true);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i)].real();
  return out;
}

}  // namespace mst::dsp
