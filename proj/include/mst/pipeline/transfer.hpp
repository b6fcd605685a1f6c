// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end style transfer. The input is cut into overlapping segments;
// each segment's spectrogram is encoded, diffused partway forward, denoised
// back under the target style condition, decoded, and re-synthesized. The
// source enters generation through partial forward diffusion of its latent
// (pure condition-guided sampling from noise would lose the content), and
// neighboring segments share spherically interpolated initial noise across
// the boundary before their waveforms are crossfaded.

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mst/backbone/unet.hpp"
#include "mst/codec/latent_codec.hpp"
#include "mst/cond/conditioning.hpp"
#include "mst/cond/vocabulary.hpp"
#include "mst/dsp/stft.hpp"
#include "mst/eval/classifier.hpp"
#include "mst/pipeline/checkpoint.hpp"
#include "mst/pipeline/config.hpp"
#include "mst/vocoder/vocoder.hpp"

namespace mst::pipeline {

// Loaded stage artifacts. Heap-allocated and non-movable because the
// condition encoder keeps a pointer to the vocabulary.
struct CodecArtifact {
  PipelineConfig cfg;
  nn::ParamStore<float> ps;
  std::unique_ptr<codec::LatentCodec<float>> model;
};

struct LdmArtifact {
  PipelineConfig cfg;
  double reference_db = 0.0;
  std::unique_ptr<cond::Vocabulary> vocab;
  nn::ParamStore<float> ps;
  std::unique_ptr<backbone::UNet<float>> unet;
  std::unique_ptr<cond::ConditionEncoder<float>> encoder;
  int64_t latent_c = 0, latent_h = 0, latent_w = 0;
};

struct VocoderArtifact {
  PipelineConfig cfg;
  double reference_db = 0.0;
  nn::ParamStore<float> ps;
  std::unique_ptr<vocoder::Vocoder<float>> model;
};

struct ClassifierArtifact {
  PipelineConfig cfg;
  std::vector<std::string> axes;
  std::map<std::string, eval::ClassifierModel<float>> models;
};

// Each loader throws MissingCheckpoint naming the absent file.
std::unique_ptr<CodecArtifact> load_codec(const std::string& ckpt_dir);
std::unique_ptr<LdmArtifact> load_ldm(const std::string& ckpt_dir);
std::unique_ptr<VocoderArtifact> load_vocoder(const std::string& ckpt_dir);
std::unique_ptr<ClassifierArtifact> load_classifiers(
    const std::string& ckpt_dir);

// Spherical interpolation between same-shape tensors; falls back to linear
// blending when the vectors are nearly parallel.
Tensor<float> slerp(const Tensor<float>& a, const Tensor<float>& b, double u);

// Overlap-add with a raised-cosine crossfade whose two weights sum to one,
// so identical overlapping content passes through unchanged. Output length
// is the sum of segment lengths minus the overlaps.
dsp::Waveform stitch(const std::vector<dsp::Waveform>& segments,
                     int64_t overlap_samples);

struct TransferOptions {
  // Zeros fall back to the values stored in the checkpoints' config.
  int64_t steps = 0;
  uint64_t seed = 1;
  double strength = 0.0;
  int64_t vocoder_steps = 0;
};

struct TransferResult {
  dsp::Waveform audio;
  double seconds_elapsed = 0.0;
  int64_t segments = 0;
  std::vector<int64_t> label_ids;
};

// style_labels holds "axis:name" strings; unknown labels raise ConfigError.
TransferResult transfer(const dsp::Waveform& input,
                        const std::vector<std::string>& style_labels,
                        const std::string& ckpt_dir,
                        const TransferOptions& opt);

}  // namespace mst::pipeline
