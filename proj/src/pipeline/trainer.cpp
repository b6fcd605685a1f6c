// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#include "mst/pipeline/trainer.hpp"

#include <algorithm>
#include <filesystem>
#include <sstream>

#include "mst/backbone/unet.hpp"
#include "mst/codec/latent_codec.hpp"
#include "mst/cond/conditioning.hpp"
#include "mst/cond/vocabulary.hpp"
#include "mst/core/adam.hpp"
#include "mst/core/rng.hpp"
#include "mst/diffusion/sampler.hpp"
#include "mst/dsp/spec_io.hpp"
#include "mst/dsp/wav.hpp"
#include "mst/eval/classifier.hpp"
#include "mst/vocoder/vocoder.hpp"

namespace fs = std::filesystem;

namespace mst::pipeline {
namespace {

struct SegmentRef {
  const ClipEntry* entry;
  std::string spec;
  std::string audio;
};

std::vector<SegmentRef> split_segments(const DatasetManifest& m,
                                       const std::string& split) {
  std::vector<SegmentRef> out;
  for (const auto* e : m.split_entries(split))
    for (std::size_t i = 0; i < e->segment_specs.size(); ++i)
      out.push_back({e, e->segment_specs[i], e->segment_audio[i]});
  return out;
}

// All cached segments share one spectrogram size; anything else means the
// cache was built by a different run.
void check_uniform(const std::vector<Tensor<float>>& images) {
  for (const auto& t : images)
    if (t.shape() != images.front().shape())
      throw ConfigError("train: cached segments disagree in size; re-ingest");
}

std::vector<Tensor<float>> load_images(const std::vector<SegmentRef>& segs,
                                       int64_t multiple, int64_t channels) {
  std::vector<Tensor<float>> out;
  out.reserve(segs.size());
  for (const auto& s : segs) {
    dsp::Spectrogram sp = dsp::load_spectrogram(s.spec);
    out.push_back(
        codec::spectrogram_image<float>(codec::pad_to_multiple(sp, multiple),
                                        channels));
  }
  check_uniform(out);
  return out;
}

Tensor<float> gather_rows(const std::vector<Tensor<float>>& images,
                          const std::vector<int64_t>& idx) {
  std::vector<int64_t> shape = images.front().shape();
  const int64_t row = images.front().numel();
  shape[0] = static_cast<int64_t>(idx.size());
  Tensor<float> out(shape);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const float* src = images[static_cast<std::size_t>(idx[i])].data();
    std::copy(src, src + row, out.data() + static_cast<int64_t>(i) * row);
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void base_meta(Checkpoint& ck, const std::string& stage,
               const PipelineConfig& cfg, const DatasetManifest& m,
               int64_t step, const Rng& data_rng, const Rng& noise_rng,
               double last_loss) {
  ck.meta["stage"] = stage;
  ck.meta["config"] = config_text(cfg);
  ck.meta["reference_db"] = fmt(m.reference_db);
  ck.meta["step"] = std::to_string(step);
  ck.meta["rng.data"] = data_rng.serialize();
  ck.meta["rng.noise"] = noise_rng.serialize();
  ck.meta["loss"] = fmt(last_loss);
}

// Restores params, moments, and RNG streams; returns the step to continue
// from. A checkpoint for a different stage is a hard error.
int64_t restore(const std::string& path, const std::string& stage,
                nn::ParamStore<float>& ps, nn::Adam<float>& opt,
                Rng& data_rng, Rng& noise_rng) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.meta_at("stage") != stage)
    throw std::runtime_error("checkpoint at " + path + " is for stage " +
                             ck.meta_at("stage") + ", expected " + stage);
  unpack_params(ck, "model.", ps);
  unpack_adam(ck, "adam.", opt, ps);
  data_rng.deserialize(ck.meta_at("rng.data"));
  noise_rng.deserialize(ck.meta_at("rng.noise"));
  return ck.meta_int("step");
}

std::string vocab_lines(const cond::Vocabulary& v) {
  std::string out;
  for (int64_t id = 0; id < v.size(); ++id) out += v.label(id) + "\n";
  return out;
}

// One token per label axis, every clip must cover every axis.
cond::Vocabulary build_vocabulary(const DatasetManifest& m) {
  cond::Vocabulary v;
  for (const auto& axis : m.axes())
    for (const auto& name : m.names_for_axis(axis)) v.add(axis, name);
  return v;
}

}  // namespace

backbone::UNetConfig build_unet_config(const PipelineConfig& cfg,
                                       int64_t in_channels, int64_t lh,
                                       int64_t lw) {
  backbone::UNetConfig uc;
  uc.in_channels = in_channels;
  uc.widths = cfg.unet_widths;
  uc.num_layers = cfg.unet_layers;
  uc.t_dim = cfg.t_dim;
  uc.d_tau = cfg.d_tau;
  uc.latent_h = lh;
  uc.latent_w = lw;
  const auto ladder = uc.resolution_ladder();
  for (int64_t i = static_cast<int64_t>(ladder.size()) - cfg.attn_stages;
       i < static_cast<int64_t>(ladder.size()); ++i)
    uc.attention_resolutions.push_back(ladder[static_cast<std::size_t>(i)]);
  uc.validate();
  return uc;
}

namespace {

std::vector<int64_t> entry_label_ids(const ClipEntry& e,
                                     const std::vector<std::string>& axes,
                                     const cond::Vocabulary& vocab) {
  std::vector<int64_t> ids;
  for (const auto& axis : axes) {
    auto it = e.labels.find(axis);
    if (it == e.labels.end())
      throw ConfigError("train: clip '" + e.path + "' has no label on axis '" +
                        axis + "'");
    ids.push_back(vocab.id(axis, it->second));
  }
  return ids;
}

StageResult train_codec_stage(const DatasetManifest& m,
                              const PipelineConfig& cfg,
                              const std::string& ckpt_dir, bool resume) {
  const TrainConfig& tc = cfg.train_codec;
  const auto segs = split_segments(m, "train");
  if (segs.empty()) throw ConfigError("train codec: no training segments");
  const auto images =
      load_images(segs, cfg.latent_multiple(), cfg.codec.in_channels);
  const int64_t n = static_cast<int64_t>(images.size());
  const int64_t H = images.front().dim(2), W = images.front().dim(3);
  const int64_t f = cfg.codec.downsample_factor;

  nn::ParamStore<float> ps;
  Rng init_rng(derive_seed(tc.seed, 0));
  codec::LatentCodec<float> model(ps, "codec", cfg.codec, init_rng);
  nn::Adam<float> opt(ps.vars(), static_cast<float>(tc.lr));
  Rng data_rng(derive_seed(tc.seed, 1));
  Rng noise_rng(derive_seed(tc.seed, 2));

  StageResult res;
  res.checkpoint_path = stage_checkpoint_path(ckpt_dir, "codec");
  int64_t start = 0;
  if (resume && checkpoint_exists(res.checkpoint_path))
    start = restore(res.checkpoint_path, "codec", ps, opt, data_rng, noise_rng);

  const int64_t B = std::min<int64_t>(tc.batch, n);
  double last = 0.0;
  for (int64_t s = start + 1; s <= tc.steps; ++s) {
    std::vector<int64_t> idx(static_cast<std::size_t>(B));
    for (auto& i : idx) i = data_rng.uniform_int(n);
    ag::Var<float> x = ag::Var<float>::constant(gather_rows(images, idx));
    Tensor<float> eps = noise_rng.normal_tensor<float>(
        {B, cfg.codec.latent_channels, H / f, W / f});
    auto g = model.encode(x);
    auto z = codec::sample_latent(g, eps);
    auto loss = codec::codec_loss(x, model.decode(z), g, cfg.codec);
    ps.zero_grad();
    loss.total.backward();
    opt.step();
    last = static_cast<double>(loss.total.value()[0]);
    res.loss_curve.push_back(last);
    if (s % tc.checkpoint_interval == 0 || s == tc.steps) {
      Checkpoint ck;
      base_meta(ck, "codec", cfg, m, s, data_rng, noise_rng, last);
      pack_params(ck, "model.", ps);
      pack_adam(ck, "adam.", opt, ps);
      save_checkpoint(res.checkpoint_path, ck);
    }
  }
  res.steps_done = std::max(start, tc.steps);
  return res;
}

StageResult train_ldm_stage(const DatasetManifest& m, const PipelineConfig& cfg,
                            const std::string& ckpt_dir, bool resume) {
  const TrainConfig& tc = cfg.train_ldm;
  const std::string codec_path = stage_checkpoint_path(ckpt_dir, "codec");
  if (!checkpoint_exists(codec_path))
    throw MissingCheckpoint("ldm stage requires the codec checkpoint at '" +
                            codec_path + "'; run train codec first");
  Checkpoint codec_ck = load_checkpoint(codec_path);
  const PipelineConfig ccfg = config_from_text(codec_ck.meta_at("config"));
  nn::ParamStore<float> cps;
  Rng crng(0);
  codec::LatentCodec<float> codec_model(cps, "codec", ccfg.codec, crng);
  unpack_params(codec_ck, "model.", cps);

  const auto segs = split_segments(m, "train");
  if (segs.empty()) throw ConfigError("train ldm: no training segments");
  const int64_t multiple = ccfg.codec.downsample_factor
                           << (static_cast<int64_t>(cfg.unet_widths.size()) - 1);
  const auto images = load_images(segs, multiple, ccfg.codec.in_channels);

  std::vector<Tensor<float>> latents;
  latents.reserve(images.size());
  {
    ag::NoGradGuard ng;
    for (const auto& img : images)
      latents.push_back(
          codec_model.encode(ag::Var<float>::constant(img)).mean.value());
  }
  const int64_t c = latents.front().dim(1);
  const int64_t lh = latents.front().dim(2), lw = latents.front().dim(3);

  const std::vector<std::string> axes = m.axes();
  if (axes.empty()) throw ConfigError("train ldm: corpus has no style labels");
  cond::Vocabulary vocab = build_vocabulary(m);
  std::vector<std::vector<int64_t>> seg_ids;
  seg_ids.reserve(segs.size());
  for (const auto& s : segs)
    seg_ids.push_back(entry_label_ids(*s.entry, axes, vocab));
  const int64_t n_tok = static_cast<int64_t>(axes.size());

  nn::ParamStore<float> ps;
  Rng init_rng(derive_seed(tc.seed, 0));
  backbone::UNetConfig uc = build_unet_config(cfg, c, lh, lw);
  backbone::UNet<float> unet(ps, "unet", uc, init_rng);
  cond::ConditionEncoder<float> enc(ps, "cond", vocab, {cfg.d_tau, 16},
                                    init_rng);
  nn::Adam<float> opt(ps.vars(), static_cast<float>(tc.lr));
  Rng data_rng(derive_seed(tc.seed, 1));
  Rng noise_rng(derive_seed(tc.seed, 2));
  const diffusion::NoiseSchedule sched = cfg.schedule();

  StageResult res;
  res.checkpoint_path = stage_checkpoint_path(ckpt_dir, "ldm");
  int64_t start = 0;
  if (resume && checkpoint_exists(res.checkpoint_path))
    start = restore(res.checkpoint_path, "ldm", ps, opt, data_rng, noise_rng);

  const int64_t n = static_cast<int64_t>(latents.size());
  const int64_t B = std::min<int64_t>(tc.batch, n);
  const int64_t row = latents.front().numel();
  double last = 0.0;
  for (int64_t s = start + 1; s <= tc.steps; ++s) {
    std::vector<int64_t> ts(static_cast<std::size_t>(B));
    std::vector<int64_t> flat_ids;
    Tensor<float> z_t({B, c, lh, lw});
    Tensor<float> eps_b({B, c, lh, lw});
    for (int64_t b = 0; b < B; ++b) {
      const int64_t pick = data_rng.uniform_int(n);
      const int64_t t = 1 + data_rng.uniform_int(cfg.T);
      ts[static_cast<std::size_t>(b)] = t;
      for (int64_t id : seg_ids[static_cast<std::size_t>(pick)])
        flat_ids.push_back(id);
      Tensor<float> eps = noise_rng.normal_tensor<float>({1, c, lh, lw});
      Tensor<float> zt = diffusion::forward_sample<float>(
          latents[static_cast<std::size_t>(pick)], t, eps, sched);
      std::copy(zt.data(), zt.data() + row, z_t.data() + b * row);
      std::copy(eps.data(), eps.data() + row, eps_b.data() + b * row);
    }
    ag::Var<float> t_emb = unet.timestep_embed()(ts);
    cond::ConditionTokens<float> ctx = enc.encode_batch(flat_ids, B, n_tok);
    if (cfg.condition_dropout > 0)
      ctx.tokens = cond::dropout_condition(ctx.tokens, unet.null_context(1),
                                           noise_rng, cfg.condition_dropout);
    ag::Var<float> eps_hat =
        unet(ag::Var<float>::constant(z_t), t_emb, &ctx);
    ag::Var<float> loss =
        ag::mse_loss(eps_hat, ag::Var<float>::constant(eps_b));
    ps.zero_grad();
    loss.backward();
    opt.step();
    last = static_cast<double>(loss.value()[0]);
    res.loss_curve.push_back(last);
    if (s % tc.checkpoint_interval == 0 || s == tc.steps) {
      Checkpoint ck;
      base_meta(ck, "ldm", cfg, m, s, data_rng, noise_rng, last);
      ck.meta["vocab"] = vocab_lines(vocab);
      ck.meta["latent.h"] = std::to_string(lh);
      ck.meta["latent.w"] = std::to_string(lw);
      ck.meta["latent.c"] = std::to_string(c);
      pack_params(ck, "model.", ps);
      pack_adam(ck, "adam.", opt, ps);
      save_checkpoint(res.checkpoint_path, ck);
    }
  }
  res.steps_done = std::max(start, tc.steps);
  return res;
}

StageResult train_vocoder_stage(const DatasetManifest& m,
                                const PipelineConfig& cfg,
                                const std::string& ckpt_dir, bool resume) {
  const TrainConfig& tc = cfg.train_vocoder;
  const auto segs = split_segments(m, "train");
  if (segs.empty()) throw ConfigError("train vocoder: no training segments");
  std::vector<dsp::Waveform> waves;
  waves.reserve(segs.size());
  for (const auto& s : segs) waves.push_back(dsp::read_wav(s.audio));
  const int64_t crop = cfg.vocoder_crop;
  const int64_t hop = cfg.voc.hop();
  for (const auto& w : waves)
    if (w.size() < crop)
      throw ConfigError("train vocoder: segment shorter than the crop");

  nn::ParamStore<float> ps;
  Rng init_rng(derive_seed(tc.seed, 0));
  vocoder::Vocoder<float> voc(ps, "vocoder", cfg.voc, init_rng);
  nn::Adam<float> opt(ps.vars(), static_cast<float>(tc.lr));
  Rng data_rng(derive_seed(tc.seed, 1));
  Rng noise_rng(derive_seed(tc.seed, 2));
  const diffusion::NoiseSchedule sched = cfg.voc.schedule();

  StageResult res;
  res.checkpoint_path = stage_checkpoint_path(ckpt_dir, "vocoder");
  int64_t start = 0;
  if (resume && checkpoint_exists(res.checkpoint_path))
    start =
        restore(res.checkpoint_path, "vocoder", ps, opt, data_rng, noise_rng);

  const int64_t n = static_cast<int64_t>(waves.size());
  const int64_t B = std::min<int64_t>(tc.batch, n);
  const int64_t M = crop / hop;
  double last = 0.0;
  for (int64_t s = start + 1; s <= tc.steps; ++s) {
    ag::Var<float> loss;
    bool have = false;
    for (int64_t b = 0; b < B; ++b) {
      const int64_t pick = data_rng.uniform_int(n);
      const dsp::Waveform& w = waves[static_cast<std::size_t>(pick)];
      const int64_t off = data_rng.uniform_int((w.size() - crop) / hop + 1) * hop;
      const int64_t t = 1 + data_rng.uniform_int(cfg.voc.T);
      dsp::Waveform cw{{w.samples.begin() + off, w.samples.begin() + off + crop},
                       w.sample_rate};
      Tensor<float> y0({1, 1, crop});
      for (int64_t i = 0; i < crop; ++i)
        y0[i] = static_cast<float>(cw.samples[static_cast<std::size_t>(i)]);
      Tensor<float> eps = noise_rng.normal_tensor<float>({1, 1, crop});
      dsp::Spectrogram sp =
          dsp::magnitude(dsp::stft(cw, m.stft), dsp::Scale::decibel,
                         m.reference_db, m.floor_db);
      ag::Var<float> code =
          ag::slice_axis1(voc.encode_spectrogram(sp), 0, M);
      ag::Var<float> li = vocoder::vocoder_loss(voc, y0, eps, code, t, sched);
      loss = have ? ag::add(loss, li) : li;
      have = true;
    }
    loss = ag::mul_scalar(loss, 1.0f / static_cast<float>(B));
    ps.zero_grad();
    loss.backward();
    opt.step();
    last = static_cast<double>(loss.value()[0]);
    res.loss_curve.push_back(last);
    if (s % tc.checkpoint_interval == 0 || s == tc.steps) {
      Checkpoint ck;
      base_meta(ck, "vocoder", cfg, m, s, data_rng, noise_rng, last);
      pack_params(ck, "model.", ps);
      pack_adam(ck, "adam.", opt, ps);
      save_checkpoint(res.checkpoint_path, ck);
    }
  }
  res.steps_done = std::max(start, tc.steps);
  return res;
}

StageResult train_classifier_stage(const DatasetManifest& m,
                                   const PipelineConfig& cfg,
                                   const std::string& ckpt_dir) {
  const TrainConfig& tc = cfg.train_classifier;
  const std::vector<std::string> axes = m.axes();
  if (axes.empty())
    throw ConfigError("train classifier: corpus has no style labels");
  const auto segs = split_segments(m, "train");
  if (segs.empty()) throw ConfigError("train classifier: no training segments");

  std::vector<Tensor<float>> image_list = load_images(segs, 1, 1);
  std::vector<int64_t> all(image_list.size());
  for (std::size_t i = 0; i < all.size(); ++i)
    all[i] = static_cast<int64_t>(i);
  Tensor<float> images = gather_rows(image_list, all);

  const auto val_segs = split_segments(m, "val");
  std::vector<dsp::Waveform> val_waves;
  val_waves.reserve(val_segs.size());
  for (const auto& s : val_segs) val_waves.push_back(dsp::read_wav(s.audio));

  StageResult res;
  res.checkpoint_path = stage_checkpoint_path(ckpt_dir, "classifier");
  Checkpoint ck;
  ck.meta["stage"] = "classifier";
  ck.meta["config"] = config_text(cfg);
  ck.meta["reference_db"] = fmt(m.reference_db);
  ck.meta["floor_db"] = fmt(m.floor_db);
  std::string axes_csv;
  double acc_sum = 0.0;
  int64_t acc_n = 0;
  for (std::size_t a = 0; a < axes.size(); ++a) {
    const std::string& axis = axes[a];
    const std::vector<std::string> names = m.names_for_axis(axis);
    if (names.size() < 2)
      throw ConfigError("train classifier: axis '" + axis +
                        "' has a single label");
    std::vector<int64_t> labels;
    for (const auto& s : segs) {
      auto it = s.entry->labels.find(axis);
      if (it == s.entry->labels.end())
        throw ConfigError("train: clip '" + s.entry->path +
                          "' has no label on axis '" + axis + "'");
      const auto pos = std::find(names.begin(), names.end(), it->second);
      labels.push_back(pos - names.begin());
    }
    eval::TrainOptions opt;
    opt.steps = tc.steps;
    opt.batch = tc.batch;
    opt.lr = tc.lr;
    opt.seed = derive_seed(tc.seed, a);
    opt.val_fraction = 0.0;
    eval::TrainReport rep;
    eval::ClassifierModel<float> model = eval::train_classifier<float>(
        images, labels, names, cfg.clf, opt, &rep);
    model.stft = m.stft;
    model.reference_db = m.reference_db;
    model.floor_db = m.floor_db;

    double acc = rep.val_accuracy;
    if (!val_waves.empty()) {
      std::vector<int64_t> targets;
      for (const auto& s : val_segs) {
        auto it = s.entry->labels.find(axis);
        if (it == s.entry->labels.end())
          throw ConfigError("train: clip '" + s.entry->path +
                            "' has no label on axis '" + axis + "'");
        const auto pos = std::find(names.begin(), names.end(), it->second);
        targets.push_back(pos - names.begin());
      }
      acc = eval::style_accuracy(model, val_waves, targets);
    }
    acc_sum += acc;
    ++acc_n;
    res.loss_curve.insert(res.loss_curve.end(), rep.loss_curve.begin(),
                          rep.loss_curve.end());

    const std::string prefix = "classifier." + axis + ".";
    pack_params(ck, prefix + "model.", model.params);
    std::string names_csv;
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (i) names_csv += ',';
      names_csv += names[i];
    }
    ck.meta[prefix + "classes"] = names_csv;
    ck.meta[prefix + "val_accuracy"] = fmt(acc);
    if (a) axes_csv += ',';
    axes_csv += axis;
  }
  ck.meta["axes"] = axes_csv;
  ck.meta["step"] = std::to_string(tc.steps);
  save_checkpoint(res.checkpoint_path, ck);
  res.steps_done = tc.steps;
  res.val_metric = acc_sum / static_cast<double>(acc_n);
  return res;
}

}  // namespace

std::string stage_checkpoint_path(const std::string& ckpt_dir,
                                  const std::string& stage) {
  return (fs::path(ckpt_dir) / (stage + ".ckpt")).string();
}

StageResult train_stage(const std::string& stage, const DatasetManifest& m,
                        const PipelineConfig& cfg, const std::string& ckpt_dir,
                        bool resume) {
  cfg.validate();
  fs::create_directories(ckpt_dir);
  if (stage == "codec") return train_codec_stage(m, cfg, ckpt_dir, resume);
  if (stage == "ldm") return train_ldm_stage(m, cfg, ckpt_dir, resume);
  if (stage == "vocoder") return train_vocoder_stage(m, cfg, ckpt_dir, resume);
  if (stage == "classifier") return train_classifier_stage(m, cfg, ckpt_dir);
  throw ConfigError("train: unknown stage '" + stage +
                    "' (expected codec, ldm, vocoder, or classifier)");
}

}  // namespace mst::pipeline
