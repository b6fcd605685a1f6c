// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0
//
// Short-time analysis of mono waveforms. Frames are taken over a
// reflect-padded signal (half a window on each side) so the frame count is
// a deterministic function of the length, and inversion is the
// least-squares overlap-add with squared-window normalization.

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "mst/core/tensor.hpp"

namespace mst::dsp {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  int64_t size() const { return static_cast<int64_t>(samples.size()); }
  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

struct StftParams {
  int64_t win_length = 400;
  int64_t hop = 100;
  int64_t fft_size = 512;

  bool operator==(const StftParams&) const = default;
};

// Throws std::invalid_argument unless 0 < hop <= win_length <= fft_size,
// fft_size is a power of two, and the Hann window satisfies the nonzero
// overlap-add condition required for least-squares inversion.
void validate(const StftParams& p);

enum class Scale { linear, decibel };

struct ComplexSpectrogram {
  // [fft_size/2 + 1 bins, frames]
  Tensor<std::complex<double>> values;
  StftParams params;
  int sample_rate = 16000;
  // Source sample count, kept so inversion restores the exact length.
  int64_t length = 0;
};

struct Spectrogram {
  // [bins, frames], row-major, nonnegative in linear scale.
  TensorD magnitude;
  StftParams params;
  Scale scale = Scale::linear;
  // Decibel normalization anchor: a magnitude at reference_db maps to 1.0
  // and floor_db below it maps to 0.
  double reference_db = 0.0;
  double floor_db = 80.0;
  int sample_rate = 16000;
  int64_t length = 0;

  int64_t bins() const { return magnitude.dim(0); }
  int64_t frames() const { return magnitude.dim(1); }
};

// Periodic Hann window of the given length.
std::vector<double> hann_window(int64_t n);

// Splits into fixed-length segments; the last one is zero-padded.
// An empty input yields an empty list.
std::vector<Waveform> segment(const Waveform& w, double seconds);

ComplexSpectrogram stft(const Waveform& w, const StftParams& p);

// Entry-wise modulus. In decibel scale the result is
// clamp(1 + (20 log10 |v| - reference_db) / floor_db, 0, 1); a non-finite
// reference (the default) anchors at the matrix maximum.
Spectrogram magnitude(const ComplexSpectrogram& c, Scale scale,
                      double reference_db = std::nan(""), double floor_db = 80.0);

// Inverse of the normalization applied by magnitude(): linear amplitudes
// from a decibel-scale spectrogram.
Spectrogram to_linear(const Spectrogram& s);

// Applies the decibel normalization to a linear-scale spectrogram.
Spectrogram to_decibel(const Spectrogram& s, double reference_db,
                       double floor_db = 80.0);

// Least-squares inverse; exact round trip for unmodified spectrograms.
Waveform istft(const ComplexSpectrogram& c);

// Phase reconstruction from a linear-scale spectrogram, zero-phase start.
// Throws if the spectrogram is in decibel scale.
Waveform griffin_lim(const Spectrogram& s, int iterations);

// ||  |stft(w)| - target ||_F / ||target||_F with the target's params.
double spectral_convergence(const Waveform& w, const Spectrogram& target);

}  // namespace mst::dsp
