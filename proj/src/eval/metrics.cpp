// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#include "mst/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mst::eval {

EmbeddingStats compute_stats(const TensorD& features) {
  if (features.rank() != 2)
    throw std::invalid_argument("compute_stats: [N, d] features required");
  const int64_t N = features.dim(0), d = features.dim(1);
  if (N < 2) throw std::invalid_argument("compute_stats: need at least 2 rows");
  EmbeddingStats s;
  s.count = N;
  s.mean.assign(static_cast<std::size_t>(d), 0.0);
  for (int64_t i = 0; i < N; ++i)
    for (int64_t j = 0; j < d; ++j)
      s.mean[static_cast<std::size_t>(j)] += features[i * d + j];
  for (double& m : s.mean) m /= static_cast<double>(N);
  s.covariance = TensorD({d, d});
  for (int64_t i = 0; i < N; ++i)
    for (int64_t a = 0; a < d; ++a) {
      const double da = features[i * d + a] - s.mean[static_cast<std::size_t>(a)];
      for (int64_t b = a; b < d; ++b) {
        const double db = features[i * d + b] - s.mean[static_cast<std::size_t>(b)];
        s.covariance[a * d + b] += da * db;
      }
    }
  for (int64_t a = 0; a < d; ++a)
    for (int64_t b = a; b < d; ++b) {
      const double v = s.covariance[a * d + b] / static_cast<double>(N - 1);
      s.covariance[a * d + b] = v;
      s.covariance[b * d + a] = v;
    }
  return s;
}

void jacobi_eigen(const TensorD& sym, std::vector<double>& values,
                  TensorD& vectors) {
  if (sym.rank() != 2 || sym.dim(0) != sym.dim(1))
    throw std::invalid_argument("jacobi_eigen: square matrix required");
  const int64_t n = sym.dim(0);
  TensorD a = sym;
  // Symmetrize defensively; the algorithm assumes exact symmetry.
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) {
      const double v = 0.5 * (a[i * n + j] + a[j * n + i]);
      a[i * n + j] = v;
      a[j * n + i] = v;
    }
  vectors = TensorD({n, n});
  for (int64_t i = 0; i < n; ++i) vectors[i * n + i] = 1.0;

  double norm = 0;
  for (int64_t i = 0; i < n * n; ++i) norm += a[i] * a[i];
  const double tol = 1e-24 * std::max(norm, 1e-300);

  for (int sweep = 0; sweep < 128; ++sweep) {
    double off = 0;
    for (int64_t p = 0; p < n; ++p)
      for (int64_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off <= tol) break;
    for (int64_t p = 0; p < n; ++p) {
      for (int64_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        const double app = a[p * n + p], aqq = a[q * n + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int64_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (int64_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (int64_t k = 0; k < n; ++k) {
          const double vkp = vectors[k * n + p], vkq = vectors[k * n + q];
          vectors[k * n + p] = c * vkp - s * vkq;
          vectors[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  values.assign(static_cast<std::size_t>(n), 0.0);
  for (int64_t i = 0; i < n; ++i) values[static_cast<std::size_t>(i)] = a[i * n + i];
}

TensorD sqrt_psd(const TensorD& sym) {
  std::vector<double> vals;
  TensorD vecs;
  jacobi_eigen(sym, vals, vecs);
  const int64_t n = sym.dim(0);
  TensorD out({n, n});
  for (std::size_t k = 0; k < vals.size(); ++k) {
    const double r = std::sqrt(std::max(0.0, vals[k]));
    if (r == 0.0) continue;
    for (int64_t i = 0; i < n; ++i) {
      const double vi = vecs[i * n + static_cast<int64_t>(k)] * r;
      for (int64_t j = 0; j < n; ++j)
        out[i * n + j] += vi * vecs[j * n + static_cast<int64_t>(k)];
    }
  }
  return out;
}

double frechet_distance(const EmbeddingStats& a, const EmbeddingStats& b) {
  const int64_t d = a.dim();
  if (d != b.dim() || d == 0)
    throw std::invalid_argument("frechet_distance: dimension mismatch");
  if (a.covariance.dim(0) != d || b.covariance.dim(0) != d)
    throw std::invalid_argument("frechet_distance: covariance dims mismatch");

  double mean_term = 0;
  for (int64_t i = 0; i < d; ++i) {
    const double dm = a.mean[static_cast<std::size_t>(i)] -
                      b.mean[static_cast<std::size_t>(i)];
    mean_term += dm * dm;
  }
  double tr = 0;
  for (int64_t i = 0; i < d; ++i)
    tr += a.covariance[i * d + i] + b.covariance[i * d + i];

  // tr((Sa Sb)^{1/2}) through the symmetric product sqrt(Sa) Sb sqrt(Sa).
  TensorD s = sqrt_psd(a.covariance);
  TensorD tmp({d, d});
  for (int64_t i = 0; i < d; ++i)
    for (int64_t k = 0; k < d; ++k) {
      const double v = s[i * d + k];
      if (v == 0.0) continue;
      for (int64_t j = 0; j < d; ++j) tmp[i * d + j] += v * b.covariance[k * d + j];
    }
  TensorD m({d, d});
  for (int64_t i = 0; i < d; ++i)
    for (int64_t k = 0; k < d; ++k) {
      const double v = tmp[i * d + k];
      if (v == 0.0) continue;
      for (int64_t j = 0; j < d; ++j) m[i * d + j] += v * s[k * d + j];
    }
  std::vector<double> vals;
  TensorD vecs;
  jacobi_eigen(m, vals, vecs);
  double tr_sqrt = 0;
  for (double v : vals) tr_sqrt += std::sqrt(std::max(0.0, v));

  return std::max(0.0, mean_term + tr - 2.0 * tr_sqrt);
}

double inception_score(const TensorD& probs) {
  if (probs.rank() != 2)
    throw std::invalid_argument("inception_score: [N, K] matrix required");
  const int64_t N = probs.dim(0), K = probs.dim(1);
  if (N < 1 || K < 1) throw std::invalid_argument("inception_score: empty input");
  for (int64_t i = 0; i < N; ++i) {
    double row = 0;
    for (int64_t k = 0; k < K; ++k) {
      if (probs[i * K + k] < 0)
        throw std::invalid_argument("inception_score: negative probability");
      row += probs[i * K + k];
    }
    if (std::abs(row - 1.0) > 1e-6)
      throw std::invalid_argument("inception_score: rows must sum to 1");
  }
  std::vector<double> marginal(static_cast<std::size_t>(K), 0.0);
  for (int64_t i = 0; i < N; ++i)
    for (int64_t k = 0; k < K; ++k)
      marginal[static_cast<std::size_t>(k)] += probs[i * K + k];
  for (double& m : marginal) m /= static_cast<double>(N);
  double kl = 0;
  for (int64_t i = 0; i < N; ++i)
    for (int64_t k = 0; k < K; ++k) {
      const double p = probs[i * K + k];
      if (p <= 0) continue;
      kl += p * std::log(p / marginal[static_cast<std::size_t>(k)]);
    }
  return std::exp(kl / static_cast<double>(N));
}

namespace {

TensorD magnitude_of(const dsp::Waveform& w, const dsp::StftParams& params) {
  return dsp::magnitude(dsp::stft(w, params), dsp::Scale::linear).magnitude;
}

}  // namespace

double spectral_convergence(const dsp::Waveform& ref, const dsp::Waveform& out,
                            const dsp::StftParams& params) {
  dsp::Waveform r = ref, o = out;
  const std::size_t n = std::min(r.samples.size(), o.samples.size());
  if (n == 0) throw std::invalid_argument("spectral_convergence: empty waveform");
  r.samples.resize(n);
  o.samples.resize(n);
  TensorD mr = magnitude_of(r, params);
  TensorD mo = magnitude_of(o, params);
  double num = 0, den = 0;
  for (int64_t i = 0; i < mr.numel(); ++i) {
    const double d = mo[i] - mr[i];
    num += d * d;
    den += mr[i] * mr[i];
  }
  if (den == 0) throw std::invalid_argument("spectral_convergence: silent reference");
  return std::sqrt(num / den);
}

double spectral_convergence(const dsp::Spectrogram& ref_linear,
                            const dsp::Waveform& out) {
  if (ref_linear.scale != dsp::Scale::linear)
    throw std::invalid_argument("spectral_convergence: linear reference required");
  TensorD mo = magnitude_of(out, ref_linear.params);
  if (mo.dim(0) != ref_linear.bins())
    throw std::invalid_argument("spectral_convergence: bin count mismatch");
  const int64_t frames = std::min(mo.dim(1), ref_linear.frames());
  const int64_t bins = mo.dim(0);
  double num = 0, den = 0;
  for (int64_t b = 0; b < bins; ++b)
    for (int64_t m = 0; m < frames; ++m) {
      const double r = ref_linear.magnitude[b * ref_linear.frames() + m];
      const double d = mo[b * mo.dim(1) + m] - r;
      num += d * d;
      den += r * r;
    }
  if (den == 0) throw std::invalid_argument("spectral_convergence: silent reference");
  return std::sqrt(num / den);
}

double log_spectral_distance(const dsp::Waveform& ref, const dsp::Waveform& out,
                             const dsp::StftParams& params) {
  dsp::Waveform r = ref, o = out;
  const std::size_t n = std::min(r.samples.size(), o.samples.size());
  if (n == 0) throw std::invalid_argument("log_spectral_distance: empty waveform");
  r.samples.resize(n);
  o.samples.resize(n);
  TensorD mr = magnitude_of(r, params);
  TensorD mo = magnitude_of(o, params);
  const double eps = 1e-10;
  double acc = 0;
  for (int64_t i = 0; i < mr.numel(); ++i) {
    const double d = 20.0 * std::log10(mr[i] + eps) - 20.0 * std::log10(mo[i] + eps);
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(mr.numel()));
}

std::vector<double> onset_times(const dsp::Waveform& w,
                                const dsp::StftParams& params) {
  TensorD mag = magnitude_of(w, params);
  const int64_t bins = mag.dim(0), frames = mag.dim(1);
  if (frames < 3) return {};
  std::vector<double> flux(static_cast<std::size_t>(frames), 0.0);
  for (int64_t m = 1; m < frames; ++m) {
    double f = 0;
    for (int64_t b = 0; b < bins; ++b) {
      const double d = mag[b * frames + m] - mag[b * frames + m - 1];
      if (d > 0) f += d;
    }
    flux[static_cast<std::size_t>(m)] = f;
  }
  double mean = 0;
  for (double f : flux) mean += f;
  mean /= static_cast<double>(frames);
  double var = 0;
  for (double f : flux) var += (f - mean) * (f - mean);
  const double sd = std::sqrt(var / static_cast<double>(frames));
  const double threshold = mean + 0.5 * sd;

  // Local maxima above threshold, at least 50 ms apart.
  const double frame_dt = static_cast<double>(params.hop) / w.sample_rate;
  const int64_t min_gap = std::max<int64_t>(1, static_cast<int64_t>(0.05 / frame_dt));
  std::vector<double> out;
  int64_t last = -min_gap;
  for (int64_t m = 1; m + 1 < frames; ++m) {
    const double f = flux[static_cast<std::size_t>(m)];
    if (f < threshold) continue;
    if (f < flux[static_cast<std::size_t>(m - 1)] ||
        f < flux[static_cast<std::size_t>(m + 1)])
      continue;
    if (m - last < min_gap) continue;
    out.push_back(static_cast<double>(m) * frame_dt);
    last = m;
  }
  return out;
}

double onset_f1(const std::vector<double>& reference,
                const std::vector<double>& estimated, double tolerance) {
  if (reference.empty() && estimated.empty()) return 1.0;
  if (reference.empty() || estimated.empty()) return 0.0;
  std::vector<bool> used(estimated.size(), false);
  int64_t hits = 0;
  for (double r : reference) {
    int64_t best = -1;
    double best_gap = tolerance;
    for (std::size_t j = 0; j < estimated.size(); ++j) {
      if (used[j]) continue;
      const double gap = std::abs(estimated[j] - r);
      if (gap <= best_gap) {
        best_gap = gap;
        best = static_cast<int64_t>(j);
      }
    }
    if (best >= 0) {
      used[static_cast<std::size_t>(best)] = true;
      ++hits;
    }
  }
  const double precision = static_cast<double>(hits) / estimated.size();
  const double recall = static_cast<double>(hits) / reference.size();
  if (precision + recall == 0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace mst::eval
