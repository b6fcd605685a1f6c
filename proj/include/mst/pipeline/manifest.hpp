// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dataset ingestion. A corpus is a directory tree of WAV files whose style
// labels are read from path components of the form "axis=name" (for example
// corpus/timbre=sine/genre=rising/take1.wav) and, when present, from a
// sidecar "<clip>.labels" file with one "axis:name" line per label; sidecar
// lines win over path components on the same axis.
//
// ingest() resamples to the target rate, mixes to mono, peak-normalizes,
// cuts fixed-length segments, and caches one spectrogram and one audio file
// per segment under the cache directory. Splits are assigned per source
// file by ordering a seeded hash, so reruns with the same seed reproduce
// the same manifest.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mst/dsp/stft.hpp"
#include "mst/pipeline/config.hpp"

namespace mst::pipeline {

struct ClipEntry {
  std::string path;
  double duration_seconds = 0.0;
  std::map<std::string, std::string> labels;
  std::string split;  // train, test, or val
  std::vector<std::string> segment_specs;
  std::vector<std::string> segment_audio;
};

struct DatasetManifest {
  int sample_rate = 16000;
  dsp::StftParams stft;
  double reference_db = 0.0;
  double floor_db = 80.0;
  double segment_seconds = 5.0;
  uint64_t seed = 1;
  std::vector<ClipEntry> entries;

  std::vector<const ClipEntry*> split_entries(const std::string& split) const;
  // Sorted axis names seen anywhere in the corpus.
  std::vector<std::string> axes() const;
  // Sorted label names for one axis.
  std::vector<std::string> names_for_axis(const std::string& axis) const;
};

struct IngestOptions {
  std::string cache_dir;  // empty picks default_cache_dir()
  uint64_t seed = 1;
  double segment_seconds = 5.0;
  double target_dbfs = -10.0;
  double floor_db = 80.0;
  int sample_rate = 16000;
  dsp::StftParams stft;
};

struct IngestReport {
  DatasetManifest manifest;
  std::vector<std::string> warnings;
  std::string manifest_path;
};

// The decibel normalization anchor shared by every cached spectrogram: the
// largest magnitude a full-scale sine can produce under the analysis window,
// 20 log10(sum(w)/2). Anchoring at a data-dependent maximum instead would
// make segment images incomparable across clips.
double window_reference_db(const dsp::StftParams& p);

IngestReport ingest(const std::string& root, const IngestOptions& opt);

std::string manifest_path(const std::string& cache_dir);
void save_manifest(const std::string& path, const DatasetManifest& m);
// Throws ConfigError when the file is absent or malformed.
DatasetManifest load_manifest(const std::string& path);

// Split quotas: val and test each get round(N/10), train the rest. Stays
// within one file of 80/10/10 for any N >= 10.
std::vector<std::string> assign_splits(const std::vector<std::string>& paths,
                                       uint64_t seed);

// Labels parsed from "axis=name" path components under root.
std::map<std::string, std::string> labels_from_path(const std::string& root,
                                                    const std::string& path);

}  // namespace mst::pipeline
