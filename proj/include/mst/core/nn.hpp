// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0
//
// Thin layer modules over the autodiff ops. Every parameter is registered
// in a ParamStore under a dotted name so optimizers and checkpoints can
// enumerate them in a stable order.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mst/core/autograd.hpp"
#include "mst/core/rng.hpp"
#include "mst/core/tensor.hpp"

namespace mst::nn {

enum class Init { he, xavier, zero, ones };

template <typename T>
class ParamStore {
 public:
  ag::Var<T> add(const std::string& name, Tensor<T> init) {
    if (index_.count(name)) throw std::runtime_error("ParamStore: duplicate " + name);
    ag::Var<T> v = ag::Var<T>::param(std::move(init));
    index_[name] = params_.size();
    params_.push_back({name, v});
    return v;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  ag::Var<T> get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("ParamStore: unknown " + name);
    return params_[it->second].var;
  }

  std::size_t size() const { return params_.size(); }
  const std::string& name(std::size_t i) const { return params_[i].name; }
  ag::Var<T>& var(std::size_t i) { return params_[i].var; }
  const ag::Var<T>& var(std::size_t i) const { return params_[i].var; }

  int64_t numel() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.var.value().numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  std::vector<ag::Var<T>> vars() const {
    std::vector<ag::Var<T>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.var);
    return out;
  }

  // Overwrite a parameter value in place (checkpoint restore).
  void load(const std::string& name, const Tensor<T>& value) {
    ag::Var<T> v = get(name);
    if (v.value().shape() != value.shape())
      throw std::runtime_error("ParamStore: shape mismatch loading " + name);
    v.value() = value;
  }

 private:
  struct Entry {
    std::string name;
    ag::Var<T> var;
  };
  std::vector<Entry> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

template <typename T>
Tensor<T> init_tensor(std::vector<int64_t> shape, int64_t fan_in, Init kind, Rng& rng) {
  Tensor<T> t(shape);
  switch (kind) {
    case Init::zero:
      return t;
    case Init::ones:
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(1);
      return t;
    case Init::he: {
      const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal() * std);
      return t;
    }
    case Init::xavier: {
      const double std = std::sqrt(1.0 / static_cast<double>(fan_in));
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal() * std);
      return t;
    }
  }
  return t;
}

}  // namespace detail

template <typename T>
struct Linear {
  ag::Var<T> w, b;

  Linear() = default;
  Linear(ParamStore<T>& ps, const std::string& name, int64_t in, int64_t out,
         Rng& rng, bool bias = true, Init kind = Init::he) {
    w = ps.add(name + ".w", detail::init_tensor<T>({out, in}, in, kind, rng));
    if (bias) b = ps.add(name + ".b", Tensor<T>({out}));
  }

  ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::linear(x, w, b); }
};

template <typename T>
struct Conv2d {
  ag::Var<T> w, b;
  int64_t stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(ParamStore<T>& ps, const std::string& name, int64_t cin, int64_t cout,
         int64_t k, int64_t stride_, int64_t pad_, Rng& rng, bool bias = true,
         Init kind = Init::he)
      : stride(stride_), pad(pad_) {
    w = ps.add(name + ".w",
               detail::init_tensor<T>({cout, cin, k, k}, cin * k * k, kind, rng));
    if (bias) b = ps.add(name + ".b", Tensor<T>({cout}));
  }

  ag::Var<T> operator()(const ag::Var<T>& x) const {
    return ag::conv2d(x, w, b, stride, pad);
  }
};

template <typename T>
struct Conv1d {
  ag::Var<T> w, b;
  int64_t stride = 1, pad = 0;

  Conv1d() = default;
  Conv1d(ParamStore<T>& ps, const std::string& name, int64_t cin, int64_t cout,
         int64_t k, int64_t stride_, int64_t pad_, Rng& rng, bool bias = true,
         Init kind = Init::he)
      : stride(stride_), pad(pad_) {
    w = ps.add(name + ".w",
               detail::init_tensor<T>({cout, cin, k}, cin * k, kind, rng));
    if (bias) b = ps.add(name + ".b", Tensor<T>({cout}));
  }

  ag::Var<T> operator()(const ag::Var<T>& x) const {
    return ag::conv1d(x, w, b, stride, pad);
  }
};

// Largest group count <= 8 that divides the channel count.
inline int64_t pick_groups(int64_t channels) {
  for (int64_t g = std::min<int64_t>(8, channels); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

template <typename T>
struct GroupNorm {
  ag::Var<T> gamma, beta;
  int64_t groups = 1;

  GroupNorm() = default;
  GroupNorm(ParamStore<T>& ps, const std::string& name, int64_t channels,
            int64_t groups_)
      : groups(groups_) {
    Tensor<T> g({channels});
    for (int64_t i = 0; i < channels; ++i) g[i] = T(1);
    gamma = ps.add(name + ".gamma", std::move(g));
    beta = ps.add(name + ".beta", Tensor<T>({channels}));
  }

  ag::Var<T> operator()(const ag::Var<T>& x) const {
    return ag::group_norm(x, gamma, beta, groups);
  }
};

template <typename T>
struct Embedding {
  ag::Var<T> table;

  Embedding() = default;
  Embedding(ParamStore<T>& ps, const std::string& name, int64_t vocab, int64_t dim,
            Rng& rng) {
    Tensor<T> t({vocab, dim});
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal() * 0.02);
    table = ps.add(name + ".table", std::move(t));
  }

  ag::Var<T> operator()(const std::vector<int64_t>& ids, int64_t B, int64_t M) const {
    return ag::embedding(table, ids, B, M);
  }
};

}  // namespace mst::nn
