// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#include "mst/dsp/spec_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace mst::dsp {

namespace {

constexpr char kMagic[8] = {'M', 'S', 'T', 'S', 'P', 'E', 'C', '1'};

template <typename T>
void wr(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T rd(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("load_spectrogram: truncated file");
  return v;
}

}  // namespace

void save_spectrogram(const std::string& path, const Spectrogram& s) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_spectrogram: cannot open " + path);
  f.write(kMagic, 8);
  wr<uint32_t>(f, 1);
  wr<int32_t>(f, static_cast<int32_t>(s.params.win_length));
  wr<int32_t>(f, static_cast<int32_t>(s.params.hop));
  wr<int32_t>(f, static_cast<int32_t>(s.params.fft_size));
  wr<int32_t>(f, s.sample_rate);
  wr<uint8_t>(f, s.scale == Scale::decibel ? 1 : 0);
  wr<double>(f, s.reference_db);
  wr<double>(f, s.floor_db);
  wr<int64_t>(f, s.length);
  wr<int64_t>(f, s.bins());
  wr<int64_t>(f, s.frames());
  std::vector<float> payload(static_cast<std::size_t>(s.magnitude.numel()));
  for (int64_t i = 0; i < s.magnitude.numel(); ++i)
    payload[static_cast<std::size_t>(i)] = static_cast<float>(s.magnitude[i]);
  f.write(reinterpret_cast<const char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!f) throw std::runtime_error("save_spectrogram: write failed for " + path);
}

Spectrogram load_spectrogram(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_spectrogram: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("load_spectrogram: bad magic in " + path);
  const uint32_t version = rd<uint32_t>(f);
  if (version != 1)
    throw std::runtime_error("load_spectrogram: unsupported version in " + path);
  Spectrogram s;
  s.params.win_length = rd<int32_t>(f);
  s.params.hop = rd<int32_t>(f);
  s.params.fft_size = rd<int32_t>(f);
  s.sample_rate = rd<int32_t>(f);
  s.scale = rd<uint8_t>(f) ? Scale::decibel : Scale::linear;
  s.reference_db = rd<double>(f);
  s.floor_db = rd<double>(f);
  s.length = rd<int64_t>(f);
  const int64_t h = rd<int64_t>(f);
  const int64_t w = rd<int64_t>(f);
  if (h <= 0 || w <= 0 || h * w > (int64_t(1) << 34))
    throw std::runtime_error("load_spectrogram: implausible shape in " + path);
  s.magnitude = TensorD({h, w});
  std::vector<float> payload(static_cast<std::size_t>(h * w));
  f.read(reinterpret_cast<char*>(payload.data()),
         static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!f) throw std::runtime_error("load_spectrogram: truncated payload in " + path);
  for (int64_t i = 0; i < h * w; ++i) s.magnitude[i] = payload[static_cast<std::size_t>(i)];
  return s;
}

void save_spectrogram_png(const std::string& path, const Spectrogram& s) {
  const int64_t h = s.bins(), w = s.frames();
  double mx = 1.0;
  if (s.scale == Scale::linear) {
    mx = 0.0;
    for (int64_t i = 0; i < s.magnitude.numel(); ++i)
      mx = std::max(mx, s.magnitude[i]);
    if (mx <= 0) mx = 1.0;
  }

  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("save_spectrogram_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("save_spectrogram_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("save_spectrogram_png: libpng write failed");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
               16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(static_cast<std::size_t>(w) * 2);
  for (int64_t y = 0; y < h; ++y) {
    const int64_t bin = h - 1 - y;  // low frequencies at the bottom
    for (int64_t x = 0; x < w; ++x) {
      const double v = std::clamp(s.magnitude.at(bin, x) / mx, 0.0, 1.0);
      const uint16_t q = static_cast<uint16_t>(std::lround(v * 65535.0));
      row[static_cast<std::size_t>(x) * 2] = static_cast<png_byte>(q >> 8);
      row[static_cast<std::size_t>(x) * 2 + 1] = static_cast<png_byte>(q & 0xFF);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace mst::dsp
