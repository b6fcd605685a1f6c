// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#include "mst/pipeline/evaluate.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "mst/dsp/wav.hpp"
#include "mst/eval/metrics.hpp"
#include "mst/pipeline/transfer.hpp"

namespace fs = std::filesystem;

namespace mst::pipeline {
namespace {

struct LabeledClips {
  std::vector<dsp::Waveform> waves;
  std::vector<std::map<std::string, std::string>> labels;
};

LabeledClips from_split(const DatasetManifest& m, const std::string& split) {
  LabeledClips out;
  for (const auto* e : m.split_entries(split))
    for (const auto& path : e->segment_audio) {
      out.waves.push_back(dsp::read_wav(path));
      out.labels.push_back(e->labels);
    }
  return out;
}

LabeledClips from_dir(const std::string& dir) {
  if (!fs::is_directory(dir))
    throw ConfigError("evaluate: '" + dir + "' is not a directory");
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (ext == ".wav") files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  LabeledClips out;
  for (const auto& path : files) {
    out.waves.push_back(dsp::read_wav(path));
    out.labels.push_back(labels_from_path(dir, path));
  }
  return out;
}

}  // namespace

std::vector<EvalRow> evaluate_corpus(const DatasetManifest& m,
                                     const std::string& ckpt_dir,
                                     const std::string& gen_dir,
                                     const std::string& report_csv) {
  auto clf = load_classifiers(ckpt_dir);
  const LabeledClips real = from_split(m, "val");
  const LabeledClips gen =
      gen_dir.empty() ? from_split(m, "test") : from_dir(gen_dir);
  if (real.waves.size() < 2)
    throw ConfigError("evaluate: the validation split needs >= 2 segments");
  if (gen.waves.size() < 2)
    throw ConfigError("evaluate: need >= 2 generated clips");

  std::vector<EvalRow> rows;
  for (const auto& axis : clf->axes) {
    const eval::ClassifierModel<float>& model = clf->models.at(axis);
    std::vector<int64_t> targets;
    for (const auto& labels : gen.labels) {
      auto it = labels.find(axis);
      if (it == labels.end())
        throw ConfigError("evaluate: a generated clip has no label on axis '" +
                          axis + "'");
      const auto pos = std::find(model.class_names.begin(),
                                 model.class_names.end(), it->second);
      if (pos == model.class_names.end())
        throw ConfigError("evaluate: unknown label '" + it->second +
                          "' on axis '" + axis + "'");
      targets.push_back(pos - model.class_names.begin());
    }

    EvalRow row;
    row.axis = axis;
    row.n_real = static_cast<int64_t>(real.waves.size());
    row.n_generated = static_cast<int64_t>(gen.waves.size());
    const eval::EmbeddingStats rs =
        eval::compute_stats(eval::embed(real.waves, model));
    const eval::EmbeddingStats gs =
        eval::compute_stats(eval::embed(gen.waves, model));
    row.frechet = eval::frechet_distance(rs, gs);
    row.inception =
        eval::inception_score(eval::class_posteriors(gen.waves, model));
    row.accuracy = eval::style_accuracy(model, gen.waves, targets);
    rows.push_back(std::move(row));
  }

  if (!report_csv.empty()) {
    std::ofstream os(report_csv, std::ios::trunc);
    if (!os) throw ConfigError("evaluate: cannot write '" + report_csv + "'");
    os << "axis,n_real,n_generated,frechet_distance,inception_score,accuracy\n";
    os.precision(10);
    for (const auto& r : rows)
      os << r.axis << ',' << r.n_real << ',' << r.n_generated << ','
         << r.frechet << ',' << r.inception << ',' << r.accuracy << "\n";
  }
  return rows;
}

}  // namespace mst::pipeline
