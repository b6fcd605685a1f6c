// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0
//
// Stage training. The overall objective is a sum of the stage losses, but
// the stages are trained one at a time: codec, then classifier, then the
// latent denoiser, then the vocoder. Each stage writes periodic checkpoints
// that carry parameters, optimizer moments, and RNG streams, so resuming an
// interrupted run continues the loss curve exactly.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mst/backbone/unet.hpp"
#include "mst/pipeline/checkpoint.hpp"
#include "mst/pipeline/config.hpp"
#include "mst/pipeline/manifest.hpp"

namespace mst::pipeline {

// Denoiser layout for a given latent size: attention goes to the deepest
// attn_stages levels of the resolution ladder.
backbone::UNetConfig build_unet_config(const PipelineConfig& cfg,
                                       int64_t in_channels, int64_t latent_h,
                                       int64_t latent_w);

// One scalar per stage objective; inactive stages report zero.
struct LossParts {
  double codec = 0.0;
  double diffusion = 0.0;
  double condition = 0.0;
  double vocoder = 0.0;
};

inline double total_loss(const LossParts& p) {
  return p.codec + p.diffusion + p.condition + p.vocoder;
}

struct StageResult {
  std::string checkpoint_path;
  // One entry per optimization step taken by this call; a resumed run only
  // reports the continuation.
  std::vector<double> loss_curve;
  int64_t steps_done = 0;
  // Mean validation accuracy over axes; classifier stage only.
  double val_metric = 0.0;
};

std::string stage_checkpoint_path(const std::string& ckpt_dir,
                                  const std::string& stage);

// stage is one of codec, classifier, ldm, vocoder. The ldm stage requires
// the codec checkpoint and fails naming it otherwise. With resume true an
// existing checkpoint of the same stage is continued toward cfg's step
// budget; finished checkpoints return immediately.
StageResult train_stage(const std::string& stage, const DatasetManifest& m,
                        const PipelineConfig& cfg, const std::string& ckpt_dir,
                        bool resume = true);

}  // namespace mst::pipeline
