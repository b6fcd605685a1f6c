// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command line interface. Exit codes: 0 success, 2 configuration error
// (bad flags, malformed config, unknown style), 3 missing checkpoint.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mst/diffusion/schedule.hpp"
#include "mst/dsp/spec_io.hpp"
#include "mst/dsp/wav.hpp"
#include "mst/pipeline/config.hpp"
#include "mst/pipeline/evaluate.hpp"
#include "mst/pipeline/manifest.hpp"
#include "mst/pipeline/trainer.hpp"
#include "mst/pipeline/transfer.hpp"

namespace {

using namespace mst;

pipeline::TrainConfig& stage_train(pipeline::PipelineConfig& cfg,
                                   const std::string& stage) {
  if (stage == "codec") return cfg.train_codec;
  if (stage == "ldm") return cfg.train_ldm;
  if (stage == "vocoder") return cfg.train_vocoder;
  if (stage == "classifier") return cfg.train_classifier;
  throw pipeline::ConfigError("train: unknown stage '" + stage + "'");
}

std::vector<std::string> split_labels(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"latent diffusion music style transfer"};
  app.require_subcommand(1);

  std::string config_path, preset = "toy";
  std::string cache_dir = pipeline::default_cache_dir();
  std::string ckpt_dir = "checkpoints";

  auto* ing = app.add_subcommand("ingest", "scan a corpus and build the cache");
  std::string root;
  double segment_seconds = 0, overlap_unused = 0;
  (void)overlap_unused;
  uint64_t ingest_seed = 0;
  ing->add_option("--root", root, "corpus directory")->required();
  ing->add_option("--cache", cache_dir, "cache directory");
  ing->add_option("--config", config_path, "config file");
  ing->add_option("--preset", preset, "toy or paper");
  ing->add_option("--segment-seconds", segment_seconds, "segment length");
  ing->add_option("--seed", ingest_seed, "split seed");

  auto* tr = app.add_subcommand("train", "train one stage");
  std::string stage;
  int64_t steps = 0, batch = 0;
  double lr = 0;
  uint64_t seed = 0;
  bool fresh = false;
  tr->add_option("stage", stage, "codec|ldm|vocoder|classifier")->required();
  tr->add_option("--cache", cache_dir, "cache directory");
  tr->add_option("--ckpt", ckpt_dir, "checkpoint directory");
  tr->add_option("--config", config_path, "config file");
  tr->add_option("--preset", preset, "toy or paper");
  tr->add_option("--steps", steps, "step budget override");
  tr->add_option("--batch", batch, "batch size override");
  tr->add_option("--lr", lr, "learning rate override");
  tr->add_option("--seed", seed, "seed override");
  tr->add_flag("--fresh", fresh, "ignore an existing checkpoint");

  auto* tf = app.add_subcommand("transfer", "restyle an audio file");
  std::string in_path, out_path = "transfer_out.wav", style;
  int64_t tf_steps = 0;
  uint64_t tf_seed = 1;
  double strength = 0;
  tf->add_option("--in", in_path, "input WAV")->required();
  tf->add_option("--style", style, "axis:name[,axis:name...]")->required();
  tf->add_option("--out", out_path, "output WAV");
  tf->add_option("--ckpt", ckpt_dir, "checkpoint directory");
  tf->add_option("--steps", tf_steps, "denoising steps");
  tf->add_option("--seed", tf_seed, "sampling seed");
  tf->add_option("--strength", strength, "forward diffusion depth in (0, 1]");

  auto* sy = app.add_subcommand("synth", "spectrogram to waveform");
  std::string spec_path, synth_out = "synth_out.wav";
  int64_t synth_steps = 0;
  uint64_t synth_seed = 1;
  sy->add_option("--spec", spec_path, "spectrogram file")->required();
  sy->add_option("--out", synth_out, "output WAV");
  sy->add_option("--ckpt", ckpt_dir, "checkpoint directory");
  sy->add_option("--steps", synth_steps, "denoising steps");
  sy->add_option("--seed", synth_seed, "sampling seed");

  auto* ev = app.add_subcommand("evaluate", "score generated audio");
  std::string gen_dir, report = "report.csv";
  ev->add_option("--cache", cache_dir, "cache directory");
  ev->add_option("--ckpt", ckpt_dir, "checkpoint directory");
  ev->add_option("--gen", gen_dir, "directory of generated WAVs");
  ev->add_option("--report", report, "output CSV")->required();

  auto* ds = app.add_subcommand("dump-schedule", "noise schedule as CSV");
  int64_t T = 1000;
  double beta_start = 1e-4, beta_end = 0.02;
  std::string shape = "linear", schedule_out;
  ds->add_option("--T", T, "total timesteps");
  ds->add_option("--beta-start", beta_start, "first beta");
  ds->add_option("--beta-end", beta_end, "last beta");
  ds->add_option("--shape", shape, "linear or cosine");
  ds->add_option("--out", schedule_out, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const auto base_config = [&]() {
    return config_path.empty() ? pipeline::preset_config(preset)
                               : pipeline::load_config_file(config_path);
  };

  if (*ing) {
    pipeline::PipelineConfig cfg = base_config();
    pipeline::IngestOptions opt;
    opt.cache_dir = cache_dir;
    opt.stft = cfg.stft;
    opt.sample_rate = cfg.sample_rate;
    opt.target_dbfs = cfg.target_dbfs;
    opt.floor_db = cfg.floor_db;
    opt.segment_seconds =
        segment_seconds > 0 ? segment_seconds : cfg.segment_seconds;
    if (ing->count("--seed")) opt.seed = ingest_seed;
    pipeline::IngestReport rep = pipeline::ingest(root, opt);
    for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
    int64_t train_n = 0, test_n = 0, val_n = 0, segments = 0;
    for (const auto& e : rep.manifest.entries) {
      segments += static_cast<int64_t>(e.segment_specs.size());
      if (e.split == "train") ++train_n;
      if (e.split == "test") ++test_n;
      if (e.split == "val") ++val_n;
    }
    std::cout << "ingested " << rep.manifest.entries.size() << " files ("
              << train_n << " train, " << test_n << " test, " << val_n
              << " val), " << segments << " segments\n"
              << "manifest: " << rep.manifest_path << "\n";
    return 0;
  }

  if (*tr) {
    pipeline::PipelineConfig cfg = base_config();
    pipeline::TrainConfig& tc = stage_train(cfg, stage);
    if (steps > 0) tc.steps = steps;
    if (batch > 0) tc.batch = batch;
    if (lr > 0) tc.lr = lr;
    if (tr->count("--seed")) tc.seed = seed;
    const pipeline::DatasetManifest m =
        pipeline::load_manifest(pipeline::manifest_path(cache_dir));
    pipeline::StageResult res =
        pipeline::train_stage(stage, m, cfg, ckpt_dir, !fresh);
    std::cout << "stage " << stage << ": " << res.steps_done << " steps";
    if (!res.loss_curve.empty())
      std::cout << ", final loss " << res.loss_curve.back();
    if (stage == "classifier")
      std::cout << ", val accuracy " << res.val_metric << "%";
    std::cout << "\ncheckpoint: " << res.checkpoint_path << "\n";
    return 0;
  }

  if (*tf) {
    pipeline::TransferOptions opt;
    opt.steps = tf_steps;
    opt.seed = tf_seed;
    opt.strength = strength;
    const dsp::Waveform input = dsp::read_wav(in_path);
    pipeline::TransferResult res =
        pipeline::transfer(input, split_labels(style), ckpt_dir, opt);
    dsp::write_wav(out_path, res.audio);
    std::cout << "transferred " << res.audio.duration() << " s in "
              << res.seconds_elapsed << " s (" << res.segments
              << " segments) -> " << out_path << "\n";
    return 0;
  }

  if (*sy) {
    auto voc = pipeline::load_vocoder(ckpt_dir);
    const dsp::Spectrogram spec = dsp::load_spectrogram(spec_path);
    const int64_t n =
        synth_steps > 0 ? synth_steps : voc->cfg.voc.inference_steps;
    const dsp::Waveform out = voc->model->synthesize(spec, n, synth_seed);
    dsp::write_wav(synth_out, out);
    std::cout << "synthesized " << out.duration() << " s -> " << synth_out
              << "\n";
    return 0;
  }

  if (*ev) {
    const pipeline::DatasetManifest m =
        pipeline::load_manifest(pipeline::manifest_path(cache_dir));
    const auto rows = pipeline::evaluate_corpus(m, ckpt_dir, gen_dir, report);
    for (const auto& r : rows)
      std::cout << r.axis << ": frechet " << r.frechet << ", inception "
                << r.inception << ", accuracy " << r.accuracy << "% ("
                << r.n_generated << " clips)\n";
    std::cout << "report: " << report << "\n";
    return 0;
  }

  if (*ds) {
    if (shape != "linear" && shape != "cosine")
      throw pipeline::ConfigError("dump-schedule: shape must be linear or cosine");
    const diffusion::NoiseSchedule s = diffusion::make_schedule(
        T, beta_start, beta_end,
        shape == "cosine" ? diffusion::BetaShape::cosine
                          : diffusion::BetaShape::linear);
    if (schedule_out.empty()) {
      diffusion::dump_schedule_csv(s, std::cout);
    } else {
      std::ofstream os(schedule_out, std::ios::trunc);
      if (!os)
        throw pipeline::ConfigError("dump-schedule: cannot write '" +
                                    schedule_out + "'");
      diffusion::dump_schedule_csv(s, os);
      std::cout << "schedule: " << schedule_out << "\n";
    }
    return 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const mst::pipeline::MissingCheckpoint& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const mst::pipeline::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
