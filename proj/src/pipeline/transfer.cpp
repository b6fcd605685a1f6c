// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#include "mst/pipeline/transfer.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "mst/diffusion/sampler.hpp"
#include "mst/diffusion/schedule.hpp"
#include "mst/dsp/wav.hpp"
#include "mst/pipeline/manifest.hpp"
#include "mst/pipeline/trainer.hpp"

namespace mst::pipeline {

namespace {

Checkpoint load_stage(const std::string& ckpt_dir, const std::string& stage) {
  Checkpoint ck = load_checkpoint(stage_checkpoint_path(ckpt_dir, stage));
  if (ck.meta_at("stage") != stage)
    throw std::runtime_error("checkpoint for stage " + ck.meta_at("stage") +
                             " found where " + stage + " was expected");
  return ck;
}

// Copies one frame column [c, h] in or out of a [1, c, h, w] tensor.
void get_column(const Tensor<float>& t, int64_t col, std::vector<float>& out) {
  const int64_t c = t.dim(1), h = t.dim(2), w = t.dim(3);
  out.resize(static_cast<std::size_t>(c * h));
  for (int64_t i = 0; i < c; ++i)
    for (int64_t y = 0; y < h; ++y)
      out[static_cast<std::size_t>(i * h + y)] = t[(i * h + y) * w + col];
}

void set_column(Tensor<float>& t, int64_t col, const std::vector<float>& in) {
  const int64_t c = t.dim(1), h = t.dim(2), w = t.dim(3);
  for (int64_t i = 0; i < c; ++i)
    for (int64_t y = 0; y < h; ++y)
      t[(i * h + y) * w + col] = in[static_cast<std::size_t>(i * h + y)];
}

std::vector<float> slerp_vec(const std::vector<float>& a,
                             const std::vector<float>& b, double u) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  std::vector<float> out(a.size());
  const double denom = na * nb;
  const double cosw = denom > 0 ? std::min(1.0, std::max(-1.0, dot / denom)) : 1.0;
  const double theta = std::acos(cosw);
  if (std::sin(theta) < 1e-6) {
    for (std::size_t i = 0; i < a.size(); ++i)
      out[i] = static_cast<float>((1.0 - u) * a[i] + u * b[i]);
    return out;
  }
  const double s = std::sin(theta);
  const double wa = std::sin((1.0 - u) * theta) / s;
  const double wb = std::sin(u * theta) / s;
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] = static_cast<float>(wa * a[i] + wb * b[i]);
  return out;
}

dsp::Spectrogram crop_spectrogram(const dsp::Spectrogram& s, int64_t bins,
                                  int64_t frames) {
  if (bins == s.bins() && frames == s.frames()) return s;
  dsp::Spectrogram out = s;
  out.magnitude = TensorD({bins, frames});
  for (int64_t i = 0; i < bins; ++i)
    for (int64_t j = 0; j < frames; ++j)
      out.magnitude[i * frames + j] = s.magnitude[i * s.frames() + j];
  return out;
}

}  // namespace

std::unique_ptr<CodecArtifact> load_codec(const std::string& ckpt_dir) {
  Checkpoint ck = load_stage(ckpt_dir, "codec");
  auto art = std::make_unique<CodecArtifact>();
  art->cfg = config_from_text(ck.meta_at("config"));
  Rng rng(0);
  art->model = std::make_unique<codec::LatentCodec<float>>(
      art->ps, "codec", art->cfg.codec, rng);
  unpack_params(ck, "model.", art->ps);
  return art;
}

std::unique_ptr<LdmArtifact> load_ldm(const std::string& ckpt_dir) {
  Checkpoint ck = load_stage(ckpt_dir, "ldm");
  auto art = std::make_unique<LdmArtifact>();
  art->cfg = config_from_text(ck.meta_at("config"));
  art->reference_db = std::stod(ck.meta_at("reference_db"));
  art->latent_c = ck.meta_int("latent.c");
  art->latent_h = ck.meta_int("latent.h");
  art->latent_w = ck.meta_int("latent.w");
  art->vocab = std::make_unique<cond::Vocabulary>();
  std::istringstream is(ck.meta_at("vocab"));
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto [axis, name] = cond::Vocabulary::parse_label(line);
    art->vocab->add(axis, name);
  }
  Rng rng(0);
  const backbone::UNetConfig uc = build_unet_config(
      art->cfg, art->latent_c, art->latent_h, art->latent_w);
  art->unet =
      std::make_unique<backbone::UNet<float>>(art->ps, "unet", uc, rng);
  art->encoder = std::make_unique<cond::ConditionEncoder<float>>(
      art->ps, "cond", *art->vocab,
      cond::ConditionEncoder<float>::Config{art->cfg.d_tau, 16}, rng);
  unpack_params(ck, "model.", art->ps);
  return art;
}

std::unique_ptr<VocoderArtifact> load_vocoder(const std::string& ckpt_dir) {
  Checkpoint ck = load_stage(ckpt_dir, "vocoder");
  auto art = std::make_unique<VocoderArtifact>();
  art->cfg = config_from_text(ck.meta_at("config"));
  art->reference_db = std::stod(ck.meta_at("reference_db"));
  Rng rng(0);
  art->model = std::make_unique<vocoder::Vocoder<float>>(art->ps, "vocoder",
                                                         art->cfg.voc, rng);
  unpack_params(ck, "model.", art->ps);
  return art;
}

std::unique_ptr<ClassifierArtifact> load_classifiers(
    const std::string& ckpt_dir) {
  Checkpoint ck = load_stage(ckpt_dir, "classifier");
  auto art = std::make_unique<ClassifierArtifact>();
  art->cfg = config_from_text(ck.meta_at("config"));
  std::stringstream axes(ck.meta_at("axes"));
  std::string axis;
  while (std::getline(axes, axis, ',')) {
    if (axis.empty()) continue;
    art->axes.push_back(axis);
    const std::string prefix = "classifier." + axis + ".";
    std::vector<std::string> names;
    std::stringstream cs(ck.meta_at(prefix + "classes"));
    std::string name;
    while (std::getline(cs, name, ',')) names.push_back(name);
    eval::ClassifierModel<float>& model = art->models[axis];
    Rng rng(0);
    model.net = eval::Classifier<float>(
        model.params, "clf", art->cfg.clf,
        static_cast<int64_t>(names.size()), rng);
    unpack_params(ck, prefix + "model.", model.params);
    model.class_names = std::move(names);
    model.stft = art->cfg.stft;
    model.reference_db = std::stod(ck.meta_at("reference_db"));
    model.floor_db = std::stod(ck.meta_at("floor_db"));
    model.trained = true;
  }
  if (art->models.empty())
    throw std::runtime_error("classifier checkpoint lists no axes");
  return art;
}

Tensor<float> slerp(const Tensor<float>& a, const Tensor<float>& b, double u) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("slerp: shape mismatch");
  std::vector<float> av(a.data(), a.data() + a.numel());
  std::vector<float> bv(b.data(), b.data() + b.numel());
  const std::vector<float> ov = slerp_vec(av, bv, u);
  Tensor<float> out(a.shape());
  std::copy(ov.begin(), ov.end(), out.data());
  return out;
}

dsp::Waveform stitch(const std::vector<dsp::Waveform>& segments,
                     int64_t overlap_samples) {
  if (segments.empty()) throw std::invalid_argument("stitch: no segments");
  if (overlap_samples < 0)
    throw std::invalid_argument("stitch: negative overlap");
  for (const auto& s : segments)
    if (s.sample_rate != segments.front().sample_rate)
      throw std::invalid_argument("stitch: sample rate mismatch");
  if (segments.size() == 1) return segments.front();
  for (const auto& s : segments)
    if (overlap_samples >= s.size())
      throw std::invalid_argument("stitch: overlap >= segment length");

  int64_t total = 0;
  for (const auto& s : segments) total += s.size();
  total -= overlap_samples * static_cast<int64_t>(segments.size() - 1);
  dsp::Waveform out;
  out.sample_rate = segments.front().sample_rate;
  out.samples.assign(static_cast<std::size_t>(total), 0.0);

  int64_t pos = 0;
  for (std::size_t k = 0; k < segments.size(); ++k) {
    const auto& seg = segments[k].samples;
    int64_t i = 0;
    if (k > 0) {
      for (; i < overlap_samples; ++i) {
        const double u =
            (static_cast<double>(i) + 0.5) / static_cast<double>(overlap_samples);
        // Raised-cosine weights; they sum to one so identical overlapping
        // content is reproduced exactly.
        const double w_new = 0.5 * (1.0 - std::cos(M_PI * u));
        const std::size_t at = static_cast<std::size_t>(pos + i);
        out.samples[at] = (1.0 - w_new) * out.samples[at] +
                          w_new * seg[static_cast<std::size_t>(i)];
      }
    }
    for (; i < static_cast<int64_t>(seg.size()); ++i)
      out.samples[static_cast<std::size_t>(pos + i)] =
          seg[static_cast<std::size_t>(i)];
    pos += static_cast<int64_t>(seg.size()) - overlap_samples;
  }
  return out;
}

TransferResult transfer(const dsp::Waveform& input,
                        const std::vector<std::string>& style_labels,
                        const std::string& ckpt_dir,
                        const TransferOptions& opt) {
  const auto t_begin = std::chrono::steady_clock::now();
  if (input.samples.empty()) throw ConfigError("transfer: empty input");

  auto codec_art = load_codec(ckpt_dir);
  auto ldm = load_ldm(ckpt_dir);
  auto voc = load_vocoder(ckpt_dir);
  const PipelineConfig& cfg = ldm->cfg;

  if (style_labels.empty())
    throw ConfigError("transfer: no style labels given");
  std::vector<int64_t> ids;
  for (const auto& s : style_labels) {
    auto [axis, name] = cond::Vocabulary::parse_label(s);
    if (!ldm->vocab->has(axis, name))
      throw ConfigError("transfer: unknown style '" + s + "'");
    ids.push_back(ldm->vocab->id(axis, name));
  }

  dsp::Waveform w = dsp::resample(input, cfg.sample_rate);
  dsp::peak_normalize(w, cfg.target_dbfs);
  if (w.size() < cfg.stft.hop) throw ConfigError("transfer: input too short");

  const int64_t seg_len =
      static_cast<int64_t>(std::llround(cfg.segment_seconds * cfg.sample_rate));
  const int64_t overlap = static_cast<int64_t>(
      std::llround(cfg.overlap_seconds * cfg.sample_rate));
  const int64_t seg_hop = seg_len - overlap;
  const int64_t n_in = w.size();
  const int64_t K =
      n_in <= seg_len ? 1 : 1 + (n_in - seg_len + seg_hop - 1) / seg_hop;

  const int64_t multiple =
      codec_art->cfg.codec.downsample_factor
      << (static_cast<int64_t>(cfg.unet_widths.size()) - 1);
  const diffusion::NoiseSchedule sched = cfg.schedule();
  const double strength = opt.strength > 0 ? opt.strength : cfg.strength;
  if (!(strength > 0 && strength <= 1))
    throw ConfigError("transfer: strength must be in (0, 1]");
  const int64_t t0 = std::max<int64_t>(
      1, std::min<int64_t>(cfg.T, std::llround(strength * cfg.T)));
  const int64_t want_steps = opt.steps > 0 ? opt.steps : cfg.sample_steps;
  if (want_steps < 1) throw ConfigError("transfer: steps must be >= 1");
  const std::vector<int64_t> ts =
      diffusion::stride_timesteps(t0, std::min(want_steps, t0));
  const int64_t voc_steps =
      opt.vocoder_steps > 0 ? opt.vocoder_steps : cfg.voc.inference_steps;

  ag::NoGradGuard nograd;
  cond::StyleCondition condition;
  condition.labels = ids;
  const cond::ConditionTokens<float> ctx = ldm->encoder->encode(condition);

  TransferResult res;
  res.label_ids = ids;
  res.segments = K;

  std::vector<dsp::Waveform> outputs;
  Tensor<float> prev_noise;
  const int64_t lat_span = cfg.stft.hop * codec_art->cfg.codec.downsample_factor;
  for (int64_t k = 0; k < K; ++k) {
    const int64_t start = k * seg_hop;
    dsp::Waveform seg;
    seg.sample_rate = cfg.sample_rate;
    seg.samples.assign(static_cast<std::size_t>(seg_len), 0.0);
    for (int64_t i = 0; i < seg_len && start + i < n_in; ++i)
      seg.samples[static_cast<std::size_t>(i)] =
          w.samples[static_cast<std::size_t>(start + i)];

    dsp::Spectrogram sp =
        dsp::magnitude(dsp::stft(seg, cfg.stft), dsp::Scale::decibel,
                       ldm->reference_db, cfg.floor_db);
    const int64_t bins = sp.bins(), frames = sp.frames();
    const dsp::Spectrogram padded = codec::pad_to_multiple(sp, multiple);
    const Tensor<float> img = codec::spectrogram_image<float>(
        padded, codec_art->cfg.codec.in_channels);
    Tensor<float> z0 =
        codec_art->model->encode(ag::Var<float>::constant(img)).mean.value();

    // Per-segment noise; the leading overlap columns are slerped toward the
    // previous segment's trailing columns so the z_T seeds agree across the
    // boundary.
    Rng noise_rng(derive_seed(opt.seed, 100 + static_cast<uint64_t>(k)));
    Tensor<float> noise = noise_rng.normal_tensor<float>(z0.shape());
    if (k > 0 && prev_noise.shape() == noise.shape()) {
      const int64_t wlat = noise.dim(3);
      const int64_t o =
          std::min<int64_t>(wlat - 1,
                            std::max<int64_t>(1, overlap / lat_span));
      std::vector<float> a, b;
      for (int64_t j = 0; j < o; ++j) {
        get_column(prev_noise, wlat - o + j, a);
        get_column(noise, j, b);
        const double u =
            (static_cast<double>(j) + 1.0) / (static_cast<double>(o) + 1.0);
        set_column(noise, j, slerp_vec(a, b, u));
      }
    }
    prev_noise = noise;

    Tensor<float> z = diffusion::forward_sample<float>(z0, t0, noise, sched);
    Rng hop_rng(derive_seed(opt.seed, 300 + static_cast<uint64_t>(k)));
    for (std::size_t i = 0; i < ts.size(); ++i) {
      const int64_t a = ts[i];
      const int64_t b = i + 1 < ts.size() ? ts[i + 1] : 0;
      const ag::Var<float> t_emb = ldm->unet->timestep_embed()(a);
      const Tensor<float> eps_hat =
          (*ldm->unet)(ag::Var<float>::constant(z), t_emb, &ctx).value();
      if (b > 0) {
        const Tensor<float> hop_noise =
            hop_rng.normal_tensor<float>(z.shape());
        z = diffusion::reverse_hop<float>(z, a, b, eps_hat, &hop_noise, sched);
      } else {
        z = diffusion::reverse_hop<float>(z, a, b, eps_hat, nullptr, sched);
      }
    }

    const Tensor<float> decoded =
        codec_art->model->decode(ag::Var<float>::constant(z)).value();
    dsp::Spectrogram out_spec =
        crop_spectrogram(codec::image_spectrogram(decoded, padded), bins,
                         frames);
    out_spec.length = seg_len;
    outputs.push_back(voc->model->synthesize(
        out_spec, voc_steps, derive_seed(opt.seed, 200 + static_cast<uint64_t>(k))));
  }

  dsp::Waveform merged = stitch(outputs, overlap);
  if (merged.size() > n_in) merged.samples.resize(static_cast<std::size_t>(n_in));
  res.audio = std::move(merged);
  res.seconds_elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin)
          .count();
  return res;
}

}  // namespace mst::pipeline
