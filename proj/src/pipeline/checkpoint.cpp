// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#include "mst/pipeline/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include "mst/pipeline/config.hpp"

namespace mst::pipeline {
namespace {

constexpr char kMagic[8] = {'M', 'S', 'T', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put<uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  const uint64_t n = get<uint64_t>(is);
  if (n > (1ULL << 32)) throw std::runtime_error("checkpoint: corrupt string");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

}  // namespace

const std::string& Checkpoint::meta_at(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end())
    throw std::runtime_error("checkpoint: missing meta key " + key);
  return it->second;
}

int64_t Checkpoint::meta_int(const std::string& key) const {
  return std::stoll(meta_at(key));
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  // Write to a temp file then rename so an interrupted save never leaves a
  // half-written checkpoint under the final name.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot write " + tmp);
    os.write(kMagic, sizeof(kMagic));
    put<uint32_t>(os, ck.version);
    put<uint64_t>(os, ck.meta.size());
    for (const auto& [k, v] : ck.meta) {
      put_string(os, k);
      put_string(os, v);
    }
    put<uint64_t>(os, ck.tensors.size());
    for (const auto& [name, t] : ck.tensors) {
      put_string(os, name);
      put<uint32_t>(os, static_cast<uint32_t>(t.rank()));
      for (int64_t d = 0; d < t.rank(); ++d) put<int64_t>(os, t.dim(d));
      os.write(reinterpret_cast<const char*>(t.data()),
               static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + tmp);
  }
  std::remove(path.c_str());
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("checkpoint: cannot move " + tmp + " to " + path);
}

bool checkpoint_exists(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return static_cast<bool>(is);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingCheckpoint("checkpoint not found: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  Checkpoint ck;
  ck.version = get<uint32_t>(is);
  if (ck.version != 1)
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  const uint64_t nmeta = get<uint64_t>(is);
  for (uint64_t i = 0; i < nmeta; ++i) {
    std::string k = get_string(is);
    ck.meta[k] = get_string(is);
  }
  const uint64_t ntensors = get<uint64_t>(is);
  for (uint64_t i = 0; i < ntensors; ++i) {
    std::string name = get_string(is);
    const uint32_t rank = get<uint32_t>(is);
    if (rank > 8) throw std::runtime_error("checkpoint: corrupt rank");
    std::vector<int64_t> dims(rank);
    for (uint32_t d = 0; d < rank; ++d) dims[d] = get<int64_t>(is);
    Tensor<float> t(dims);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor " + name);
    ck.tensors[std::move(name)] = std::move(t);
  }
  return ck;
}

}  // namespace mst::pipeline
