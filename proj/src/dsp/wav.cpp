// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#include "mst/dsp/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace mst::dsp {

namespace {

uint32_t rd_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
uint16_t rd_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}
void wr_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<char*>(b), 4);
}
void wr_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<char*>(b), 2);
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_wav: cannot open " + path);
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (raw.size() < 44 || std::memcmp(raw.data(), "RIFF", 4) != 0 ||
      std::memcmp(raw.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("read_wav: not a RIFF/WAVE file: " + path);

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= raw.size()) {
    const uint32_t chunk_len = rd_u32(raw.data() + pos + 4);
    const unsigned char* body = raw.data() + pos + 8;
    if (pos + 8 + chunk_len > raw.size())
      throw std::runtime_error("read_wav: truncated chunk in " + path);
    if (std::memcmp(raw.data() + pos, "fmt ", 4) == 0) {
      if (chunk_len < 16) throw std::runtime_error("read_wav: short fmt chunk");
      format = rd_u16(body);
      channels = rd_u16(body + 2);
      rate = rd_u32(body + 4);
      bits = rd_u16(body + 14);
      if (format == 0xFFFE && chunk_len >= 40)  // extensible: subformat GUID head
        format = rd_u16(body + 24);
    } else if (std::memcmp(raw.data() + pos, "data", 4) == 0) {
      data = body;
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);
  }
  if (!data || rate == 0 || channels == 0)
    throw std::runtime_error("read_wav: missing fmt or data chunk in " + path);
  if (channels > 2)
    throw std::runtime_error("read_wav: only mono or stereo supported: " + path);

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    const std::size_t n = data_len / 2 / channels;
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0;
      for (unsigned c = 0; c < channels; ++c) {
        const int16_t s = static_cast<int16_t>(rd_u16(data + (i * channels + c) * 2));
        acc += static_cast<double>(s) / 32768.0;
      }
      w.samples[i] = acc / channels;
    }
  } else if (format == 3 && bits == 32) {
    const std::size_t n = data_len / 4 / channels;
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0;
      for (unsigned c = 0; c < channels; ++c) {
        uint32_t u = rd_u32(data + (i * channels + c) * 4);
        float s;
        std::memcpy(&s, &u, 4);
        acc += static_cast<double>(s);
      }
      w.samples[i] = acc / channels;
    }
  } else {
    throw std::runtime_error("read_wav: unsupported encoding (format " +
                             std::to_string(format) + ", " + std::to_string(bits) +
                             " bits) in " + path);
  }
  return w;
}

void write_wav(const std::string& path, const Waveform& w, bool float32) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_wav: cannot open " + path);
  const uint32_t n = static_cast<uint32_t>(w.samples.size());
  const uint16_t bytes = float32 ? 4 : 2;
  const uint32_t data_len = n * bytes;
  f.write("RIFF", 4);
  wr_u32(f, 36 + data_len);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  wr_u32(f, 16);
  wr_u16(f, float32 ? 3 : 1);
  wr_u16(f, 1);
  wr_u32(f, static_cast<uint32_t>(w.sample_rate));
  wr_u32(f, static_cast<uint32_t>(w.sample_rate) * bytes);
  wr_u16(f, bytes);
  wr_u16(f, float32 ? 32 : 16);
  f.write("data", 4);
  wr_u32(f, data_len);
  for (double v : w.samples) {
    if (float32) {
      const float s = static_cast<float>(v);
      uint32_t u;
      std::memcpy(&u, &s, 4);
      wr_u32(f, u);
    } else {
      const long s = std::clamp(std::lrint(v * 32768.0), -32768L, 32767L);
      wr_u16(f, static_cast<uint16_t>(static_cast<int16_t>(s)));
    }
  }
  if (!f) throw std::runtime_error("write_wav: write failed for " + path);
}

Waveform resample(const Waveform& w, int target_rate) {
  if (target_rate <= 0) throw std::invalid_argument("resample: bad target rate");
  if (w.sample_rate == target_rate || w.samples.empty()) {
    Waveform out = w;
    out.sample_rate = target_rate;
    return out;
  }
  const double ratio = static_cast<double>(target_rate) / w.sample_rate;
  const double fc = std::min(1.0, ratio);  // cutoff relative to source Nyquist
  const double half_taps = 32.0 / fc;
  const int64_t n = w.size();
  const int64_t out_n = static_cast<int64_t>(std::llround(n * ratio));
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<std::size_t>(out_n));
  for (int64_t i = 0; i < out_n; ++i) {
    const double center = static_cast<double>(i) / ratio;
    const int64_t k0 = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(center - half_taps)));
    const int64_t k1 = std::min<int64_t>(n - 1, static_cast<int64_t>(std::floor(center + half_taps)));
    double acc = 0;
    for (int64_t k = k0; k <= k1; ++k) {
      const double t = (static_cast<double>(k) - center) * fc;
      const double sinc = t == 0.0 ? 1.0
                                   : std::sin(std::numbers::pi * t) /
                                         (std::numbers::pi * t);
      const double u = (static_cast<double>(k) - center) / half_taps;
      const double window = 0.5 * (1.0 + std::cos(std::numbers::pi * u));
      acc += w.samples[static_cast<std::size_t>(k)] * sinc * window * fc;
    }
    out.samples[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

void peak_normalize(Waveform& w, double target_dbfs) {
  double peak = 0;
  for (double v : w.samples) peak = std::max(peak, std::abs(v));
  if (peak <= 0) return;
  const double target = std::pow(10.0, target_dbfs / 20.0);
  const double g = target / peak;
  for (double& v : w.samples) v *= g;
}

}  // namespace mst::dsp
