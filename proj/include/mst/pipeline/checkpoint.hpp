// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0
//
// Versioned checkpoint container.
//
// Binary layout (little endian):
//   bytes 0..7  magic "MSTCKPT1"
//   u32         version (1)
//   u64         meta count, then per entry: u64 klen, key, u64 vlen, value
//   u64         tensor count, then per tensor:
//               u64 name length, name, u32 rank, i64 dims, f32 payload
//
// Parameters are stored as raw float32 bits so a load reproduces forward
// passes bit for bit. Optimizer moments and RNG streams ride along so a
// resumed run continues exactly where the interrupted one stopped.

#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "mst/core/adam.hpp"
#include "mst/core/nn.hpp"
#include "mst/core/tensor.hpp"

namespace mst::pipeline {

struct Checkpoint {
  uint32_t version = 1;
  std::map<std::string, std::string> meta;
  std::map<std::string, Tensor<float>> tensors;

  bool has_meta(const std::string& key) const { return meta.count(key) != 0; }
  const std::string& meta_at(const std::string& key) const;
  int64_t meta_int(const std::string& key) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
// Throws MissingCheckpoint when the file does not exist and
// std::runtime_error on a corrupt or foreign file.
Checkpoint load_checkpoint(const std::string& path);
bool checkpoint_exists(const std::string& path);

// Copies every parameter into the checkpoint as "<prefix><param name>".
template <typename T>
void pack_params(Checkpoint& ck, const std::string& prefix,
                 const nn::ParamStore<T>& ps) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& v = ps.var(i).value();
    Tensor<float> t(v.shape());
    for (int64_t k = 0; k < v.numel(); ++k) t[k] = static_cast<float>(v[k]);
    ck.tensors[prefix + ps.name(i)] = std::move(t);
  }
}

template <typename T>
void unpack_params(const Checkpoint& ck, const std::string& prefix,
                   nn::ParamStore<T>& ps) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const std::string key = prefix + ps.name(i);
    auto it = ck.tensors.find(key);
    if (it == ck.tensors.end())
      throw std::runtime_error("checkpoint: missing tensor " + key);
    const Tensor<float>& src = it->second;
    Tensor<T> t(src.shape());
    for (int64_t k = 0; k < src.numel(); ++k) t[k] = static_cast<T>(src[k]);
    ps.load(ps.name(i), t);
  }
}

// Adam moments are keyed by the owning parameter's name so the restore is
// insensitive to registration order changes that keep names stable.
template <typename T>
void pack_adam(Checkpoint& ck, const std::string& prefix,
               nn::Adam<T>& opt, const nn::ParamStore<T>& ps) {
  if (opt.size() != ps.size())
    throw std::runtime_error("checkpoint: optimizer/store size mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (const auto& [tag, mom] :
         {std::pair<const char*, Tensor<T>*>{"m.", &opt.moment1(i)},
          std::pair<const char*, Tensor<T>*>{"v.", &opt.moment2(i)}}) {
      Tensor<float> t(mom->shape());
      for (int64_t k = 0; k < mom->numel(); ++k)
        t[k] = static_cast<float>((*mom)[k]);
      ck.tensors[prefix + tag + ps.name(i)] = std::move(t);
    }
  }
  ck.meta[prefix + "step"] = std::to_string(opt.step_count());
}

template <typename T>
void unpack_adam(const Checkpoint& ck, const std::string& prefix,
                 nn::Adam<T>& opt, const nn::ParamStore<T>& ps) {
  if (opt.size() != ps.size())
    throw std::runtime_error("checkpoint: optimizer/store size mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (const auto& [tag, mom] :
         {std::pair<const char*, Tensor<T>*>{"m.", &opt.moment1(i)},
          std::pair<const char*, Tensor<T>*>{"v.", &opt.moment2(i)}}) {
      auto it = ck.tensors.find(prefix + tag + ps.name(i));
      if (it == ck.tensors.end())
        throw std::runtime_error("checkpoint: missing optimizer state " +
                                 prefix + tag + ps.name(i));
      if (it->second.shape() != mom->shape())
        throw std::runtime_error("checkpoint: optimizer shape mismatch at " +
                                 ps.name(i));
      for (int64_t k = 0; k < mom->numel(); ++k)
        (*mom)[k] = static_cast<T>(it->second[k]);
    }
  }
  opt.set_step_count(ck.meta_int(prefix + "step"));
}

}  // namespace mst::pipeline
