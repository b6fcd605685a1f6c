// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "mst/dsp/stft.hpp"

namespace mst::dsp {

// Reads a RIFF/WAVE file (PCM 16-bit or IEEE float 32-bit, mono or stereo).
// Stereo is averaged to mono. Throws std::runtime_error on malformed or
// unsupported files.
Waveform read_wav(const std::string& path);

// Writes mono audio; float32 picks the IEEE float encoding, otherwise
// PCM 16-bit with clamping.
void write_wav(const std::string& path, const Waveform& w, bool float32 = false);

// Windowed-sinc resampling to target_rate. Identity when rates match.
Waveform resample(const Waveform& w, int target_rate);

// Scales so the peak sits at target_dbfs (e.g. -10). Silence is untouched.
void peak_normalize(Waveform& w, double target_dbfs);

}  // namespace mst::dsp
