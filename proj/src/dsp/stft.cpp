// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#include "mst/dsp/stft.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "mst/dsp/fft.hpp"

namespace mst::dsp {

namespace {

bool is_pow2(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

// Reflect index into [0, n).
int64_t reflect(int64_t i, int64_t n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

int64_t frame_count(int64_t padded, const StftParams& p) {
  if (padded < p.win_length) return 1;
  return 1 + (padded - p.win_length + p.hop - 1) / p.hop;
}

}  // namespace

std::vector<double> hann_window(int64_t n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    w[static_cast<std::size_t>(i)] =
        0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                              static_cast<double>(n)));
  return w;
}

void validate(const StftParams& p) {
  if (p.hop <= 0 || p.hop > p.win_length || p.win_length > p.fft_size)
    throw std::invalid_argument("stft: need 0 < hop <= win_length <= fft_size");
  if (!is_pow2(p.fft_size))
    throw std::invalid_argument("stft: fft_size must be a power of two");
  // Nonzero overlap-add: the squared window sums, in steady state, must be
  // bounded away from zero at every phase offset.
  const std::vector<double> w = hann_window(p.win_length);
  for (int64_t t = 0; t < p.hop; ++t) {
    double s = 0;
    for (int64_t j = t; j < p.win_length; j += p.hop)
      s += w[static_cast<std::size_t>(j)] * w[static_cast<std::size_t>(j)];
    if (s < 1e-8)
      throw std::invalid_argument("stft: window/hop fail the overlap-add condition");
  }
}

std::vector<Waveform> segment(const Waveform& w, double seconds) {
  if (seconds <= 0) throw std::invalid_argument("segment: seconds must be positive");
  std::vector<Waveform> out;
  if (w.samples.empty()) return out;
  const int64_t seg = static_cast<int64_t>(std::llround(seconds * w.sample_rate));
  if (seg <= 0) throw std::invalid_argument("segment: segment shorter than one sample");
  const int64_t n = w.size();
  for (int64_t start = 0; start < n; start += seg) {
    Waveform s;
    s.sample_rate = w.sample_rate;
    s.samples.assign(static_cast<std::size_t>(seg), 0.0);
    const int64_t take = std::min(seg, n - start);
    std::copy(w.samples.begin() + start, w.samples.begin() + start + take,
              s.samples.begin());
    out.push_back(std::move(s));
  }
  return out;
}

ComplexSpectrogram stft(const Waveform& w, const StftParams& p) {
  validate(p);
  const int64_t n = w.size();
  if (n == 0) throw std::invalid_argument("stft: empty waveform");
  const int64_t pad = p.win_length / 2;
  if (pad > n - 1 && n > 1)
    throw std::invalid_argument("stft: waveform too short for the window");
  if (n == 1 && p.win_length > 1)
    throw std::invalid_argument("stft: waveform too short for the window");

  const int64_t padded = n + 2 * pad;
  const int64_t frames = frame_count(padded, p);
  const int64_t ext = (frames - 1) * p.hop + p.win_length;
  std::vector<double> x(static_cast<std::size_t>(std::max(ext, padded)), 0.0);
  for (int64_t i = 0; i < padded; ++i)
    x[static_cast<std::size_t>(i)] = w.samples[static_cast<std::size_t>(reflect(i - pad, n))];

  const std::vector<double> win = hann_window(p.win_length);
  const int64_t bins = p.fft_size / 2 + 1;
  ComplexSpectrogram out;
  out.values = Tensor<std::complex<double>>({bins, frames});
  out.params = p;
  out.sample_rate = w.sample_rate;
  out.length = n;

  std::vector<double> buf(static_cast<std::size_t>(p.win_length));
  for (int64_t m = 0; m < frames; ++m) {
    const int64_t start = m * p.hop;
    for (int64_t j = 0; j < p.win_length; ++j)
      buf[static_cast<std::size_t>(j)] =
          x[static_cast<std::size_t>(start + j)] * win[static_cast<std::size_t>(j)];
    const auto spec = rfft(buf.data(), p.win_length, p.fft_size);
    for (int64_t k = 0; k < bins; ++k)
      out.values.at(k, m) = spec[static_cast<std::size_t>(k)];
  }
  return out;
}

Spectrogram magnitude(const ComplexSpectrogram& c, Scale scale, double reference_db,
                      double floor_db) {
  Spectrogram s;
  s.params = c.params;
  s.sample_rate = c.sample_rate;
  s.length = c.length;
  s.scale = scale;
  s.floor_db = floor_db;
  const int64_t n = c.values.numel();
  s.magnitude = TensorD(c.values.shape());
  for (int64_t i = 0; i < n; ++i) s.magnitude[i] = std::abs(c.values[i]);
  if (scale == Scale::linear) {
    s.reference_db = 0.0;
    return s;
  }
  double ref = reference_db;
  if (!std::isfinite(ref)) {
    double mx = 0;
    for (int64_t i = 0; i < n; ++i) mx = std::max(mx, s.magnitude[i]);
    ref = mx > 0 ? 20.0 * std::log10(mx) : 0.0;
  }
  s.reference_db = ref;
  for (int64_t i = 0; i < n; ++i) {
    const double v = s.magnitude[i];
    if (v <= 0) {
      s.magnitude[i] = 0.0;
      continue;
    }
    const double db = 20.0 * std::log10(v);
    s.magnitude[i] = std::clamp(1.0 + (db - ref) / floor_db, 0.0, 1.0);
  }
  return s;
}

Spectrogram to_linear(const Spectrogram& s) {
  if (s.scale == Scale::linear) return s;
  Spectrogram out = s;
  out.scale = Scale::linear;
  out.reference_db = 0.0;
  for (int64_t i = 0; i < s.magnitude.numel(); ++i) {
    const double v = s.magnitude[i];
    out.magnitude[i] =
        v <= 0 ? 0.0 : std::pow(10.0, (s.reference_db + (v - 1.0) * s.floor_db) / 20.0);
  }
  return out;
}

Spectrogram to_decibel(const Spectrogram& s, double reference_db, double floor_db) {
  if (s.scale == Scale::decibel)
    throw std::invalid_argument("to_decibel: input already in decibel scale");
  Spectrogram out = s;
  out.scale = Scale::decibel;
  out.reference_db = reference_db;
  out.floor_db = floor_db;
  for (int64_t i = 0; i < s.magnitude.numel(); ++i) {
    const double v = s.magnitude[i];
    if (v <= 0) {
      out.magnitude[i] = 0.0;
      continue;
    }
    const double db = 20.0 * std::log10(v);
    out.magnitude[i] = std::clamp(1.0 + (db - reference_db) / floor_db, 0.0, 1.0);
  }
  return out;
}

Waveform istft(const ComplexSpectrogram& c) {
  const StftParams& p = c.params;
  validate(p);
  const int64_t bins = p.fft_size / 2 + 1;
  if (c.values.dim(0) != bins)
    throw std::invalid_argument("istft: bin count does not match fft_size");
  const int64_t frames = c.values.dim(1);
  const int64_t pad = p.win_length / 2;
  const int64_t ext = (frames - 1) * p.hop + p.win_length;
  const int64_t n = c.length > 0 ? c.length : std::max<int64_t>(ext - 2 * pad, 0);

  const std::vector<double> win = hann_window(p.win_length);
  std::vector<double> acc(static_cast<std::size_t>(ext), 0.0);
  std::vector<double> wsum(static_cast<std::size_t>(ext), 0.0);
  std::vector<std::complex<double>> col(static_cast<std::size_t>(bins));
  for (int64_t m = 0; m < frames; ++m) {
    for (int64_t k = 0; k < bins; ++k) col[static_cast<std::size_t>(k)] = c.values.at(k, m);
    const std::vector<double> t = irfft(col, p.fft_size);
    const int64_t start = m * p.hop;
    for (int64_t j = 0; j < p.win_length; ++j) {
      const double wj = win[static_cast<std::size_t>(j)];
      acc[static_cast<std::size_t>(start + j)] += t[static_cast<std::size_t>(j)] * wj;
      wsum[static_cast<std::size_t>(start + j)] += wj * wj;
    }
  }
  Waveform out;
  out.sample_rate = c.sample_rate;
  out.samples.assign(static_cast<std::size_t>(n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    const std::size_t t = static_cast<std::size_t>(i + pad);
    if (t < acc.size() && wsum[t] > 1e-12) out.samples[static_cast<std::size_t>(i)] = acc[t] / wsum[t];
  }
  return out;
}

Waveform griffin_lim(const Spectrogram& s, int iterations) {
  if (s.scale != Scale::linear)
    throw std::invalid_argument("griffin_lim: linear-scale spectrogram required");
  if (iterations < 1) throw std::invalid_argument("griffin_lim: iterations >= 1");
  validate(s.params);

  ComplexSpectrogram c;
  c.params = s.params;
  c.sample_rate = s.sample_rate;
  c.length = s.length > 0 ? s.length : (s.frames() - 1) * s.params.hop;
  c.values = Tensor<std::complex<double>>(s.magnitude.shape());
  for (int64_t i = 0; i < s.magnitude.numel(); ++i)
    c.values[i] = std::complex<double>(s.magnitude[i], 0.0);

  Waveform y = istft(c);
  for (int it = 1; it < iterations; ++it) {
    ComplexSpectrogram r = stft(y, s.params);
    const int64_t frames = std::min(r.values.dim(1), s.frames());
    for (int64_t k = 0; k < s.bins(); ++k) {
      for (int64_t m = 0; m < frames; ++m) {
        const std::complex<double> v = r.values.at(k, m);
        const double a = std::abs(v);
        c.values.at(k, m) =
            a > 1e-16 ? s.magnitude.at(k, m) * (v / a)
                      : std::complex<double>(s.magnitude.at(k, m), 0.0);
      }
    }
    y = istft(c);
  }
  return y;
}

double spectral_convergence(const Waveform& w, const Spectrogram& target) {
  if (target.scale != Scale::linear)
    throw std::invalid_argument("spectral_convergence: linear-scale target required");
  const Spectrogram got = magnitude(stft(w, target.params), Scale::linear);
  const int64_t frames = std::min(got.frames(), target.frames());
  double num = 0, den = 0;
  for (int64_t k = 0; k < target.bins(); ++k) {
    for (int64_t m = 0; m < frames; ++m) {
      const double d = got.magnitude.at(k, m) - target.magnitude.at(k, m);
      num += d * d;
      den += target.magnitude.at(k, m) * target.magnitude.at(k, m);
    }
  }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

}  // namespace mst::dsp
