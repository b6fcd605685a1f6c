// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0
//
// Objective metrics: embedding statistics with a Frechet distance, the
// exponentiated-KL score over class posteriors, spectral error measures,
// and onset detection for content checks.

#pragma once

#include <cstdint>
#include <vector>

#include "mst/core/tensor.hpp"
#include "mst/dsp/stft.hpp"

namespace mst::eval {

struct EmbeddingStats {
  std::vector<double> mean;
  TensorD covariance;
  int64_t count = 0;

  int64_t dim() const { return static_cast<int64_t>(mean.size()); }
};

// Sample mean and unbiased covariance of row vectors [N, d]; N >= 2.
EmbeddingStats compute_stats(const TensorD& features);

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Eigenvalues land
// in `values`, matching eigenvectors in the columns of `vectors`.
void jacobi_eigen(const TensorD& sym, std::vector<double>& values,
                  TensorD& vectors);

// Symmetric PSD square root; negative eigenvalues are clamped to zero.
TensorD sqrt_psd(const TensorD& sym);

// ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^{1/2}), clamped at zero.
double frechet_distance(const EmbeddingStats& a, const EmbeddingStats& b);

// exp of the mean KL divergence between rows of a stochastic matrix [N, K]
// and their column-mean marginal. Rows must sum to 1 within 1e-6.
double inception_score(const TensorD& probs);

// || |STFT(out)| - |STFT(ref)| ||_F / || |STFT(ref)| ||_F, linear scale.
// Waveforms are truncated to the shorter length.
double spectral_convergence(const dsp::Waveform& ref, const dsp::Waveform& out,
                            const dsp::StftParams& params);

// Same measure against a target magnitude spectrogram in linear scale;
// frames are truncated to the shorter count.
double spectral_convergence(const dsp::Spectrogram& ref_linear,
                            const dsp::Waveform& out);

// Root-mean-square distance in dB between log magnitudes.
double log_spectral_distance(const dsp::Waveform& ref, const dsp::Waveform& out,
                             const dsp::StftParams& params);

// Onset times in seconds from half-wave-rectified spectral flux peaks.
std::vector<double> onset_times(const dsp::Waveform& w,
                                const dsp::StftParams& params);

// Greedy one-to-one matching within +-tolerance seconds; returns the F1
// score. Two empty lists count as a perfect match.
double onset_f1(const std::vector<double>& reference,
                const std::vector<double>& estimated, double tolerance = 0.05);

}  // namespace mst::eval
