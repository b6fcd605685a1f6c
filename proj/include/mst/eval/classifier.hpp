// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0
//
// Style classifier over spectrogram images. Four strided conv blocks feed
// a pooled feature head; the features double as the embedding space for
// the Frechet distance, so our numbers are comparable only to each other,
// never to published figures computed with pretrained audio embedders.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mst/core/adam.hpp"
#include "mst/core/autograd.hpp"
#include "mst/core/nn.hpp"
#include "mst/core/rng.hpp"
#include "mst/dsp/stft.hpp"
#include "mst/eval/metrics.hpp"

namespace mst::eval {

namespace ag = mst::ag;

struct ClassifierConfig {
  std::vector<int64_t> widths = {8, 16, 32, 64};
  int64_t feature_dim = 128;

  void validate() const {
    if (widths.empty()) throw std::invalid_argument("classifier: no blocks");
    for (int64_t w : widths)
      if (w < 1) throw std::invalid_argument("classifier: widths must be positive");
    if (feature_dim < 1)
      throw std::invalid_argument("classifier: feature dim must be positive");
  }

  static ClassifierConfig toy() {
    ClassifierConfig c;
    c.widths = {4, 8, 16, 16};
    c.feature_dim = 32;
    return c;
  }

  // Stub preset mirroring the reference topology's scale.
  static ClassifierConfig paper() {
    ClassifierConfig c;
    c.widths = {64, 128, 256, 512};
    c.feature_dim = 1024;
    return c;
  }
};

template <typename T>
class Classifier {
 public:
  Classifier() = default;
  Classifier(nn::ParamStore<T>& ps, const std::string& name,
             const ClassifierConfig& cfg, int64_t num_classes, Rng& rng)
      : cfg_(cfg), num_classes_(num_classes) {
    cfg_.validate();
    if (num_classes < 2)
      throw std::invalid_argument("classifier: need at least 2 classes");
    int64_t cin = 1;
    for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
      const std::string bn = name + ".b" + std::to_string(i);
      const int64_t w = cfg_.widths[i];
      conv_.emplace_back(ps, bn + ".conv", cin, w, 3, 1, 1, rng);
      gn_.emplace_back(ps, bn + ".gn", w, nn::pick_groups(w));
      down_.emplace_back(ps, bn + ".down", w, w, 3, 2, 1, rng);
      cin = w;
    }
    feat_ = nn::Linear<T>(ps, name + ".feat", cin, cfg_.feature_dim, rng);
    head_ = nn::Linear<T>(ps, name + ".head", cfg_.feature_dim, num_classes, rng);
  }

  const ClassifierConfig& config() const { return cfg_; }
  int64_t num_classes() const { return num_classes_; }

  // Penultimate features [N, feature_dim] from images [N, 1, H, W].
  ag::Var<T> features(const ag::Var<T>& x) const {
    const auto& xv = x.value();
    if (xv.rank() != 4 || xv.dim(1) != 1)
      throw std::invalid_argument("classifier: [N, 1, H, W] images required");
    ag::Var<T> h = x;
    for (std::size_t i = 0; i < conv_.size(); ++i)
      h = down_[i](ag::silu(gn_[i](conv_[i](h))));
    return ag::silu(feat_(ag::global_avg_pool(h)));
  }

  ag::Var<T> logits(const ag::Var<T>& x) const { return head_(features(x)); }

 private:
  ClassifierConfig cfg_;
  int64_t num_classes_ = 0;
  std::vector<nn::Conv2d<T>> conv_;
  std::vector<nn::GroupNorm<T>> gn_;
  std::vector<nn::Conv2d<T>> down_;
  nn::Linear<T> feat_, head_;
};

// A classifier plus everything needed to run it on raw audio: parameters,
// the class names, and the spectrogram settings used in training.
template <typename T>
struct ClassifierModel {
  nn::ParamStore<T> params;
  Classifier<T> net;
  std::vector<std::string> class_names;
  dsp::StftParams stft;
  double reference_db = 0.0;
  double floor_db = 80.0;
  bool trained = false;

  // Normalized decibel image of one clip, matching training conditions.
  Tensor<T> image_of(const dsp::Waveform& w) const {
    dsp::Spectrogram s =
        dsp::magnitude(dsp::stft(w, stft), dsp::Scale::decibel, reference_db,
                       floor_db);
    Tensor<T> img({1, 1, s.bins(), s.frames()});
    for (int64_t i = 0; i < s.magnitude.numel(); ++i)
      img[i] = static_cast<T>(s.magnitude[i]);
    return img;
  }
};

// Penultimate features for each clip, one row per clip.
template <typename T>
TensorD embed(const std::vector<dsp::Waveform>& clips,
              const ClassifierModel<T>& model) {
  if (!model.trained) throw std::runtime_error("embed: classifier is untrained");
  if (clips.empty()) throw std::invalid_argument("embed: no clips");
  ag::NoGradGuard ng;
  const int64_t d = model.net.config().feature_dim;
  TensorD out({static_cast<int64_t>(clips.size()), d});
  for (std::size_t i = 0; i < clips.size(); ++i) {
    Tensor<T> img = model.image_of(clips[i]);
    Tensor<T> f = model.net.features(ag::Var<T>::constant(std::move(img))).value();
    for (int64_t j = 0; j < d; ++j)
      out[static_cast<int64_t>(i) * d + j] = static_cast<double>(f[j]);
  }
  return out;
}

// Class posteriors [N, K] for a batch of clips.
template <typename T>
TensorD class_posteriors(const std::vector<dsp::Waveform>& clips,
                         const ClassifierModel<T>& model) {
  if (!model.trained)
    throw std::runtime_error("class_posteriors: classifier is untrained");
  if (clips.empty()) throw std::invalid_argument("class_posteriors: no clips");
  ag::NoGradGuard ng;
  const int64_t K = model.net.num_classes();
  TensorD out({static_cast<int64_t>(clips.size()), K});
  for (std::size_t i = 0; i < clips.size(); ++i) {
    Tensor<T> img = model.image_of(clips[i]);
    Tensor<T> p = ag::softmax_lastdim(
                      model.net.logits(ag::Var<T>::constant(std::move(img))))
                      .value();
    for (int64_t k = 0; k < K; ++k)
      out[static_cast<int64_t>(i) * K + k] = static_cast<double>(p[k]);
  }
  return out;
}

// Percentage of clips whose argmax class matches the target.
template <typename T>
double style_accuracy(const ClassifierModel<T>& model,
                      const std::vector<dsp::Waveform>& clips,
                      const std::vector<int64_t>& targets) {
  if (clips.empty()) throw std::invalid_argument("style_accuracy: no clips");
  if (clips.size() != targets.size())
    throw std::invalid_argument("style_accuracy: target count mismatch");
  const int64_t K = model.net.num_classes();
  for (int64_t t : targets)
    if (t < 0 || t >= K)
      throw std::invalid_argument("style_accuracy: target out of vocabulary");
  TensorD probs = class_posteriors(clips, model);
  int64_t hits = 0;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    int64_t best = 0;
    for (int64_t k = 1; k < K; ++k)
      if (probs[static_cast<int64_t>(i) * K + k] >
          probs[static_cast<int64_t>(i) * K + best])
        best = k;
    if (best == targets[i]) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(clips.size());
}

struct TrainOptions {
  int64_t steps = 300;
  int64_t batch = 16;
  double lr = 2e-3;
  uint64_t seed = 1;
  double val_fraction = 0.25;
};

struct TrainReport {
  std::vector<double> loss_curve;
  double val_accuracy = 0.0;
};

// Trains a single-axis classifier on spectrogram images [N, 1, H, W].
// Deterministic for a fixed seed. The validation split is taken from a
// seeded shuffle; with val_fraction 0 all data trains and accuracy is
// reported on the training set.
template <typename T>
ClassifierModel<T> train_classifier(const Tensor<T>& images,
                                    const std::vector<int64_t>& labels,
                                    const std::vector<std::string>& class_names,
                                    const ClassifierConfig& cfg,
                                    const TrainOptions& opt,
                                    TrainReport* report = nullptr) {
  if (images.rank() != 4 || images.dim(1) != 1)
    throw std::invalid_argument("train_classifier: [N, 1, H, W] images required");
  const int64_t N = images.dim(0);
  if (static_cast<int64_t>(labels.size()) != N)
    throw std::invalid_argument("train_classifier: label count mismatch");
  const int64_t K = static_cast<int64_t>(class_names.size());
  if (K < 2) throw std::invalid_argument("train_classifier: need >= 2 classes");
  for (int64_t l : labels)
    if (l < 0 || l >= K)
      throw std::invalid_argument("train_classifier: label out of range");
  bool multi = false;
  for (int64_t l : labels)
    if (l != labels[0]) multi = true;
  if (!multi)
    throw std::invalid_argument("train_classifier: dataset has a single class");

  ClassifierModel<T> model;
  Rng rng(opt.seed);
  model.net = Classifier<T>(model.params, "clf", cfg, K, rng);
  model.class_names = class_names;

  std::vector<int64_t> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), 0);
  for (int64_t i = N - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
  const int64_t n_val =
      std::min<int64_t>(N - 1, static_cast<int64_t>(opt.val_fraction * N));
  const int64_t n_train = N - n_val;
  if (n_train < 1) throw std::invalid_argument("train_classifier: empty train split");

  const int64_t H = images.dim(2), W = images.dim(3);
  const int64_t px = H * W;
  auto gather = [&](const std::vector<int64_t>& idx) {
    Tensor<T> batch({static_cast<int64_t>(idx.size()), 1, H, W});
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (int64_t j = 0; j < px; ++j)
        batch[static_cast<int64_t>(i) * px + j] = images[idx[i] * px + j];
    return batch;
  };

  nn::Adam<T> adam(model.params.vars(), static_cast<T>(opt.lr));
  TrainReport rep;
  const int64_t bsz = std::min<int64_t>(opt.batch, n_train);
  for (int64_t step = 0; step < opt.steps; ++step) {
    std::vector<int64_t> idx(static_cast<std::size_t>(bsz));
    std::vector<int64_t> y(static_cast<std::size_t>(bsz));
    for (int64_t i = 0; i < bsz; ++i) {
      const int64_t pick = order[static_cast<std::size_t>(rng.uniform_int(n_train))];
      idx[static_cast<std::size_t>(i)] = pick;
      y[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(pick)];
    }
    ag::Var<T> loss = ag::cross_entropy(
        model.net.logits(ag::Var<T>::constant(gather(idx))), y);
    adam.zero_grad();
    loss.backward();
    adam.step();
    rep.loss_curve.push_back(static_cast<double>(loss.value()[0]));
  }
  model.trained = true;

  // Validation accuracy on the held-out tail (train split when empty).
  {
    ag::NoGradGuard ng;
    const int64_t start = n_val > 0 ? n_train : 0;
    const int64_t count = n_val > 0 ? n_val : N;
    int64_t hits = 0;
    for (int64_t i = 0; i < count; ++i) {
      const int64_t id = order[static_cast<std::size_t>(start + i)];
      std::vector<int64_t> one = {id};
      Tensor<T> lg = model.net.logits(ag::Var<T>::constant(gather(one))).value();
      int64_t best = 0;
      for (int64_t k = 1; k < K; ++k)
        if (lg[k] > lg[best]) best = k;
      if (best == labels[static_cast<std::size_t>(id)]) ++hits;
    }
    rep.val_accuracy = 100.0 * static_cast<double>(hits) / static_cast<double>(count);
  }
  if (report) *report = rep;
  return model;
}

}  // namespace mst::eval
