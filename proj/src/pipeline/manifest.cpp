// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#include "mst/pipeline/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"
#include "mst/cond/vocabulary.hpp"
#include "mst/core/rng.hpp"
#include "mst/dsp/spec_io.hpp"
#include "mst/dsp/wav.hpp"

namespace fs = std::filesystem;

namespace mst::pipeline {
namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex16(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

bool is_wav(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return ext == ".wav";
}

std::map<std::string, std::string> sidecar_labels(const std::string& path,
                                                  std::vector<std::string>* warnings) {
  std::map<std::string, std::string> out;
  std::ifstream in(path + ".labels");
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t a = line.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) continue;
    const std::size_t b = line.find_last_not_of(" \t\r\n");
    try {
      auto [axis, name] = cond::Vocabulary::parse_label(line.substr(a, b - a + 1));
      out[axis] = name;
    } catch (const std::exception& e) {
      if (warnings)
        warnings->push_back(path + ".labels: " + e.what());
    }
  }
  return out;
}

}  // namespace

double window_reference_db(const dsp::StftParams& p) {
  const std::vector<double> w = dsp::hann_window(p.win_length);
  double sum = 0.0;
  for (double x : w) sum += x;
  return 20.0 * std::log10(sum / 2.0);
}

std::map<std::string, std::string> labels_from_path(const std::string& root,
                                                    const std::string& path) {
  std::map<std::string, std::string> out;
  const fs::path rel = fs::path(path).lexically_relative(root);
  // The filename itself never carries labels, only directories do.
  const fs::path dirs = rel.parent_path();
  for (const auto& part : dirs) {
    const std::string s = part.string();
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) continue;
    out[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return out;
}

std::vector<std::string> assign_splits(const std::vector<std::string>& paths,
                                       uint64_t seed) {
  const int64_t n = static_cast<int64_t>(paths.size());
  std::vector<int64_t> order(paths.size());
  for (std::size_t i = 0; i < paths.size(); ++i)
    order[i] = static_cast<int64_t>(i);
  std::vector<uint64_t> keys(paths.size());
  for (std::size_t i = 0; i < paths.size(); ++i)
    keys[i] = derive_seed(seed, fnv1a(paths[i]));
  std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    if (keys[a] != keys[b]) return keys[a] < keys[b];
    return paths[a] < paths[b];
  });
  int64_t n_val = std::llround(0.1 * static_cast<double>(n));
  int64_t n_test = std::llround(0.1 * static_cast<double>(n));
  while (n > 0 && n - n_val - n_test < 1) {
    if (n_val > 0)
      --n_val;
    else
      --n_test;
  }
  std::vector<std::string> out(paths.size());
  for (int64_t i = 0; i < n; ++i) {
    const char* split = i < n_test               ? "test"
                        : i < n_test + n_val     ? "val"
                                                 : "train";
    out[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = split;
  }
  return out;
}

std::vector<const ClipEntry*> DatasetManifest::split_entries(
    const std::string& split) const {
  std::vector<const ClipEntry*> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(&e);
  return out;
}

std::vector<std::string> DatasetManifest::axes() const {
  std::set<std::string> s;
  for (const auto& e : entries)
    for (const auto& [axis, name] : e.labels) s.insert(axis);
  return {s.begin(), s.end()};
}

std::vector<std::string> DatasetManifest::names_for_axis(
    const std::string& axis) const {
  std::set<std::string> s;
  for (const auto& e : entries) {
    auto it = e.labels.find(axis);
    if (it != e.labels.end()) s.insert(it->second);
  }
  return {s.begin(), s.end()};
}

IngestReport ingest(const std::string& root, const IngestOptions& opt) {
  if (!(opt.segment_seconds > 0))
    throw ConfigError("ingest: segment_seconds must be > 0");
  if (!fs::is_directory(root))
    throw ConfigError("ingest: '" + root + "' is not a directory");
  const std::string cache =
      opt.cache_dir.empty() ? default_cache_dir() : opt.cache_dir;
  fs::create_directories(fs::path(cache) / "spec");
  fs::create_directories(fs::path(cache) / "audio");

  IngestReport report;
  DatasetManifest& m = report.manifest;
  m.sample_rate = opt.sample_rate;
  m.stft = opt.stft;
  m.reference_db = window_reference_db(opt.stft);
  m.floor_db = opt.floor_db;
  m.segment_seconds = opt.segment_seconds;
  m.seed = opt.seed;

  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_regular_file() && is_wav(entry.path()))
      files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());

  std::vector<std::string> kept;
  std::vector<ClipEntry> pending;
  for (const std::string& path : files) {
    dsp::Waveform w;
    try {
      w = dsp::read_wav(path);
    } catch (const std::exception& e) {
      report.warnings.push_back(path + ": " + e.what());
      continue;
    }
    if (w.samples.empty()) {
      report.warnings.push_back(path + ": zero length, skipped");
      continue;
    }
    w = dsp::resample(w, opt.sample_rate);
    dsp::peak_normalize(w, opt.target_dbfs);

    ClipEntry entry;
    entry.path = path;
    entry.duration_seconds = w.duration();
    entry.labels = labels_from_path(root, path);
    for (const auto& [axis, name] : sidecar_labels(path, &report.warnings))
      entry.labels[axis] = name;

    const std::string stem =
        hex16(fnv1a(fs::path(path).lexically_relative(root).generic_string()));
    const std::vector<dsp::Waveform> segs = dsp::segment(w, opt.segment_seconds);
    for (std::size_t i = 0; i < segs.size(); ++i) {
      const std::string base = stem + "_" + std::to_string(i);
      const std::string spec_path =
          (fs::path(cache) / "spec" / (base + ".spec")).string();
      const std::string audio_path =
          (fs::path(cache) / "audio" / (base + ".wav")).string();
      dsp::Spectrogram s =
          dsp::magnitude(dsp::stft(segs[i], opt.stft), dsp::Scale::decibel,
                         m.reference_db, opt.floor_db);
      dsp::save_spectrogram(spec_path, s);
      dsp::write_wav(audio_path, segs[i], /*float32=*/true);
      entry.segment_specs.push_back(spec_path);
      entry.segment_audio.push_back(audio_path);
    }
    kept.push_back(fs::path(path).lexically_relative(root).generic_string());
    pending.push_back(std::move(entry));
  }

  const std::vector<std::string> splits = assign_splits(kept, opt.seed);
  for (std::size_t i = 0; i < pending.size(); ++i) {
    pending[i].split = splits[i];
    m.entries.push_back(std::move(pending[i]));
  }

  report.manifest_path = manifest_path(cache);
  save_manifest(report.manifest_path, m);
  return report;
}

std::string manifest_path(const std::string& cache_dir) {
  return (fs::path(cache_dir) / "manifest.json").string();
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
  nlohmann::json j;
  j["version"] = 1;
  j["sample_rate"] = m.sample_rate;
  j["stft"] = {{"win", m.stft.win_length},
               {"hop", m.stft.hop},
               {"fft", m.stft.fft_size}};
  j["reference_db"] = m.reference_db;
  j["floor_db"] = m.floor_db;
  j["segment_seconds"] = m.segment_seconds;
  j["seed"] = m.seed;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json je;
    je["path"] = e.path;
    je["duration"] = e.duration_seconds;
    je["labels"] = e.labels;
    je["split"] = e.split;
    je["specs"] = e.segment_specs;
    je["audio"] = e.segment_audio;
    j["entries"].push_back(std::move(je));
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("manifest: cannot write " + path);
  os << j.dump(1) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("manifest: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    is >> j;
    DatasetManifest m;
    m.sample_rate = j.at("sample_rate").get<int>();
    m.stft.win_length = j.at("stft").at("win").get<int64_t>();
    m.stft.hop = j.at("stft").at("hop").get<int64_t>();
    m.stft.fft_size = j.at("stft").at("fft").get<int64_t>();
    m.reference_db = j.at("reference_db").get<double>();
    m.floor_db = j.at("floor_db").get<double>();
    m.segment_seconds = j.at("segment_seconds").get<double>();
    m.seed = j.at("seed").get<uint64_t>();
    for (const auto& je : j.at("entries")) {
      ClipEntry e;
      e.path = je.at("path").get<std::string>();
      e.duration_seconds = je.at("duration").get<double>();
      e.labels = je.at("labels").get<std::map<std::string, std::string>>();
      e.split = je.at("split").get<std::string>();
      e.segment_specs = je.at("specs").get<std::vector<std::string>>();
      e.segment_audio = je.at("audio").get<std::vector<std::string>>();
      m.entries.push_back(std::move(e));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest: malformed '" + path + "': " + e.what());
  }
}

}  // namespace mst::pipeline
