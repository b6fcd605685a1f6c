// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0
//
// Corpus-level evaluation. For each label axis the trained classifier
// supplies the embedding space, so the Frechet distances reported here are
// comparable only across runs of this pipeline, never to figures computed
// with pretrained audio embedders.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mst/pipeline/manifest.hpp"

namespace mst::pipeline {

struct EvalRow {
  std::string axis;
  int64_t n_real = 0;
  int64_t n_generated = 0;
  double frechet = 0.0;
  double inception = 0.0;
  double accuracy = 0.0;
};

// Scores generated clips against the manifest's validation split. gen_dir
// holds WAV files labeled by "axis=name" path components; when empty the
// manifest's test split stands in as the generated set, which sanity-checks
// the metrics on real data. Writes one CSV row per axis when report_csv is
// nonempty.
std::vector<EvalRow> evaluate_corpus(const DatasetManifest& m,
                                     const std::string& ckpt_dir,
                                     const std::string& gen_dir,
                                     const std::string& report_csv);

}  // namespace mst::pipeline
