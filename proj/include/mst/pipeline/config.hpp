// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one flat key=value file drives every stage. A preset
// ("toy" or "paper") fills the defaults and individual keys override it.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mst/codec/latent_codec.hpp"
#include "mst/diffusion/schedule.hpp"
#include "mst/dsp/stft.hpp"
#include "mst/eval/classifier.hpp"
#include "mst/vocoder/vocoder.hpp"

namespace mst::pipeline {

// Bad flags, malformed config, unknown style names. CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A required checkpoint is absent. CLI exit code 3.
struct MissingCheckpoint : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr = 2e-3;
  int64_t batch = 8;
  int64_t steps = 2000;
  int64_t checkpoint_interval = 500;
  uint64_t seed = 1;

  void validate() const {
    if (!(lr > 0)) throw ConfigError("train: lr must be > 0");
    if (batch < 1) throw ConfigError("train: batch must be >= 1");
    if (steps < 1) throw ConfigError("train: steps must be >= 1");
    if (checkpoint_interval < 1)
      throw ConfigError("train: checkpoint_interval must be >= 1");
  }
};

struct PipelineConfig {
  std::string preset = "toy";

  int sample_rate = 16000;
  dsp::StftParams stft;
  double segment_seconds = 5.0;
  double overlap_seconds = 0.25;
  double target_dbfs = -10.0;
  double floor_db = 80.0;

  codec::CodecConfig codec;

  std::vector<int64_t> unet_widths = {16, 32};
  int64_t unet_layers = 1;
  // How many of the deepest stages get attention blocks.
  int64_t attn_stages = 1;
  int64_t t_dim = 32;
  int64_t d_tau = 32;
  int64_t T = 100;
  double beta_start = 1e-4;
  double beta_end = 0.2;
  std::string beta_shape = "linear";
  // Fraction of the schedule the source latent is diffused through before
  // conditional reverse sampling takes over.
  double strength = 0.6;
  int64_t sample_steps = 50;
  double condition_dropout = 0.1;

  vocoder::VocoderConfig voc;
  eval::ClassifierConfig clf;

  TrainConfig train_codec, train_ldm, train_vocoder, train_classifier;
  // Samples per vocoder training crop; must be a hop multiple.
  int64_t vocoder_crop = 2000;

  diffusion::NoiseSchedule schedule() const {
    const auto shape = beta_shape == "cosine" ? diffusion::BetaShape::cosine
                                              : diffusion::BetaShape::linear;
    return diffusion::make_schedule(T, beta_start, beta_end, shape);
  }

  // Spectrograms are zero-padded to this before encoding so the latent
  // divides the denoiser's downsampling ladder.
  int64_t latent_multiple() const {
    return codec.downsample_factor
           << (static_cast<int64_t>(unet_widths.size()) - 1);
  }

  void validate() const;
};

PipelineConfig preset_config(const std::string& name);

// key=value per line, '#' comments, blank lines ignored. A "preset" key is
// applied first regardless of position; other keys override in file order.
PipelineConfig load_config_file(const std::string& path);

void apply_override(PipelineConfig& cfg, const std::string& key,
                    const std::string& value);

// Round-trippable dump of every key.
std::string config_text(const PipelineConfig& cfg);
PipelineConfig config_from_text(const std::string& text);

// MST_CACHE_DIR when set, else "mst_cache".
std::string default_cache_dir();

}  // namespace mst::pipeline
