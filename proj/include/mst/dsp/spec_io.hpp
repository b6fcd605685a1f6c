// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0
//
// Spectrogram serialization.
//
// Binary container layout (little endian):
//   bytes 0..7   magic "MSTSPEC1"
//   u32          version (1)
//   i32          win_length, hop, fft_size, sample_rate
//   u8           scale (0 linear, 1 decibel)
//   f64          reference_db, floor_db
//   i64          source length (samples), bins H, frames W
//   f32[H*W]     magnitudes, row major
//
// PNG export is 16-bit grayscale, frequency increasing upward.

#pragma once

#include <string>

#include "mst/dsp/stft.hpp"

namespace mst::dsp {

void save_spectrogram(const std::string& path, const Spectrogram& s);
Spectrogram load_spectrogram(const std::string& path);

void save_spectrogram_png(const std::string& path, const Spectrogram& s);

}  // namespace mst::dsp
