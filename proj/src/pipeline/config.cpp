// Copyright 2026 The mst Authors
// SPDX-License-Identifier: Apache-2.0

#include "mst/pipeline/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace mst::pipeline {
namespace {

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
  }
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const int64_t i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects an integer, got '" + v +
                      "'");
  }
}

std::vector<int64_t> parse_int_list(const std::string& key,
                                    const std::string& v) {
  std::vector<int64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(key, item));
  if (out.empty()) throw ConfigError("config: " + key + " expects a list");
  return out;
}

std::string join(const std::vector<int64_t>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(xs[i]);
  }
  return s;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

void apply_train(TrainConfig& t, const std::string& key,
                 const std::string& sub, const std::string& v) {
  if (sub == "lr")
    t.lr = parse_double(key, v);
  else if (sub == "batch")
    t.batch = parse_int(key, v);
  else if (sub == "steps")
    t.steps = parse_int(key, v);
  else if (sub == "interval")
    t.checkpoint_interval = parse_int(key, v);
  else if (sub == "seed")
    t.seed = static_cast<uint64_t>(parse_int(key, v));
  else
    throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace

void PipelineConfig::validate() const {
  if (sample_rate <= 0) throw ConfigError("config: sample_rate must be > 0");
  if (!(segment_seconds > 0))
    throw ConfigError("config: segment_seconds must be > 0");
  if (!(overlap_seconds >= 0) || overlap_seconds >= segment_seconds)
    throw ConfigError("config: overlap must be in [0, segment_seconds)");
  if (!(floor_db > 0)) throw ConfigError("config: floor_db must be > 0");
  try {
    codec.validate();
    voc.validate();
    clf.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (unet_widths.empty()) throw ConfigError("config: ldm.widths is empty");
  for (int64_t w : unet_widths)
    if (w <= 0) throw ConfigError("config: ldm.widths must be positive");
  if (unet_layers < 1) throw ConfigError("config: ldm.layers must be >= 1");
  if (attn_stages < 0 ||
      attn_stages > static_cast<int64_t>(unet_widths.size()))
    throw ConfigError("config: ldm.attn_stages out of range");
  if (t_dim < 2 || t_dim % 2 != 0)
    throw ConfigError("config: ldm.t_dim must be even and >= 2");
  if (d_tau < 1) throw ConfigError("config: ldm.d_tau must be >= 1");
  if (T < 1) throw ConfigError("config: ldm.T must be >= 1");
  if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1))
    throw ConfigError("config: need 0 < beta_start <= beta_end < 1");
  if (beta_shape != "linear" && beta_shape != "cosine")
    throw ConfigError("config: ldm.beta_shape must be linear or cosine");
  if (!(strength > 0 && strength <= 1))
    throw ConfigError("config: ldm.strength must be in (0, 1]");
  if (sample_steps < 1 || sample_steps > T)
    throw ConfigError("config: ldm.sample_steps must be in [1, T]");
  if (!(condition_dropout >= 0 && condition_dropout < 1))
    throw ConfigError("config: ldm.dropout must be in [0, 1)");
  if (vocoder_crop < voc.hop() || vocoder_crop % voc.hop() != 0)
    throw ConfigError("config: vocoder.crop must be a positive hop multiple");
  if (voc.hop() != stft.hop)
    throw ConfigError("config: vocoder up factors must multiply to the hop");
  train_codec.validate();
  train_ldm.validate();
  train_vocoder.validate();
  train_classifier.validate();
}

PipelineConfig preset_config(const std::string& name) {
  PipelineConfig c;
  if (name == "toy") {
    c.preset = "toy";
    c.codec.base_width = 16;
    c.codec.latent_channels = 4;
    c.unet_widths = {16, 32};
    c.unet_layers = 1;
    c.attn_stages = 1;
    c.t_dim = 32;
    c.d_tau = 32;
    c.T = 100;
    c.beta_start = 1e-4;
    c.beta_end = 0.2;
    c.sample_steps = 50;
    c.voc = vocoder::VocoderConfig::toy();
    c.clf = eval::ClassifierConfig::toy();
    c.train_codec = {2e-3, 8, 2000, 500, 1};
    c.train_ldm = {2e-3, 8, 4000, 1000, 1};
    c.train_vocoder = {2e-3, 4, 2000, 500, 1};
    c.train_classifier = {2e-3, 16, 400, 400, 1};
    c.vocoder_crop = 2000;
  } else if (name == "paper") {
    c.preset = "paper";
    c.codec.base_width = 64;
    c.codec.latent_channels = 4;
    c.unet_widths = {512, 512, 512, 256, 128};
    c.unet_layers = 2;
    c.attn_stages = 3;
    c.t_dim = 256;
    c.d_tau = 256;
    c.T = 1000;
    c.beta_start = 1e-4;
    c.beta_end = 0.02;
    c.sample_steps = 50;
    c.voc.widths = {32, 64, 96, 96};
    c.voc.latent_channels = 32;
    c.voc.encoder_width = 32;
    c.clf = eval::ClassifierConfig::paper();
    c.train_codec = {5e-5, 100, 500000, 10000, 1};
    c.train_ldm = {5e-5, 100, 500000, 10000, 1};
    c.train_vocoder = {5e-5, 256, 1000000, 10000, 1};
    c.train_classifier = {1e-4, 64, 100000, 10000, 1};
    c.vocoder_crop = 8000;
  } else {
    throw ConfigError("config: unknown preset '" + name +
                      "' (expected toy or paper)");
  }
  return c;
}

void apply_override(PipelineConfig& cfg, const std::string& key,
                    const std::string& value) {
  const std::string v = trim(value);
  if (key == "preset") {
    cfg = preset_config(v);
  } else if (key == "data.sample_rate") {
    cfg.sample_rate = static_cast<int>(parse_int(key, v));
  } else if (key == "data.segment_seconds") {
    cfg.segment_seconds = parse_double(key, v);
  } else if (key == "data.overlap_seconds") {
    cfg.overlap_seconds = parse_double(key, v);
  } else if (key == "data.target_dbfs") {
    cfg.target_dbfs = parse_double(key, v);
  } else if (key == "data.floor_db") {
    cfg.floor_db = parse_double(key, v);
  } else if (key == "stft.win") {
    cfg.stft.win_length = parse_int(key, v);
  } else if (key == "stft.hop") {
    cfg.stft.hop = parse_int(key, v);
  } else if (key == "stft.fft") {
    cfg.stft.fft_size = parse_int(key, v);
  } else if (key == "codec.factor") {
    cfg.codec.downsample_factor = parse_int(key, v);
  } else if (key == "codec.latent_channels") {
    cfg.codec.latent_channels = parse_int(key, v);
  } else if (key == "codec.width") {
    cfg.codec.base_width = parse_int(key, v);
  } else if (key == "codec.perceptual_weight") {
    cfg.codec.perceptual_weight = parse_double(key, v);
  } else if (key == "codec.kl_weight") {
    cfg.codec.kl_weight = parse_double(key, v);
  } else if (key == "ldm.widths") {
    cfg.unet_widths = parse_int_list(key, v);
  } else if (key == "ldm.layers") {
    cfg.unet_layers = parse_int(key, v);
  } else if (key == "ldm.attn_stages") {
    cfg.attn_stages = parse_int(key, v);
  } else if (key == "ldm.t_dim") {
    cfg.t_dim = parse_int(key, v);
  } else if (key == "ldm.d_tau") {
    cfg.d_tau = parse_int(key, v);
  } else if (key == "ldm.T") {
    cfg.T = parse_int(key, v);
  } else if (key == "ldm.beta_start") {
    cfg.beta_start = parse_double(key, v);
  } else if (key == "ldm.beta_end") {
    cfg.beta_end = parse_double(key, v);
  } else if (key == "ldm.beta_shape") {
    cfg.beta_shape = v;
  } else if (key == "ldm.strength") {
    cfg.strength = parse_double(key, v);
  } else if (key == "ldm.sample_steps") {
    cfg.sample_steps = parse_int(key, v);
  } else if (key == "ldm.dropout") {
    cfg.condition_dropout = parse_double(key, v);
  } else if (key == "vocoder.widths") {
    cfg.voc.widths = parse_int_list(key, v);
  } else if (key == "vocoder.up_factors") {
    cfg.voc.up_factors = parse_int_list(key, v);
  } else if (key == "vocoder.latent_channels") {
    cfg.voc.latent_channels = parse_int(key, v);
  } else if (key == "vocoder.encoder_width") {
    cfg.voc.encoder_width = parse_int(key, v);
  } else if (key == "vocoder.T") {
    cfg.voc.T = parse_int(key, v);
  } else if (key == "vocoder.steps") {
    cfg.voc.inference_steps = parse_int(key, v);
  } else if (key == "vocoder.crop") {
    cfg.vocoder_crop = parse_int(key, v);
  } else if (key == "classifier.widths") {
    cfg.clf.widths = parse_int_list(key, v);
  } else if (key == "classifier.feature_dim") {
    cfg.clf.feature_dim = parse_int(key, v);
  } else if (key.rfind("train.codec.", 0) == 0) {
    apply_train(cfg.train_codec, key, key.substr(12), v);
  } else if (key.rfind("train.ldm.", 0) == 0) {
    apply_train(cfg.train_ldm, key, key.substr(10), v);
  } else if (key.rfind("train.vocoder.", 0) == 0) {
    apply_train(cfg.train_vocoder, key, key.substr(14), v);
  } else if (key.rfind("train.classifier.", 0) == 0) {
    apply_train(cfg.train_classifier, key, key.substr(17), v);
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

std::string config_text(const PipelineConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "preset=" << c.preset << "\n";
  os << "data.sample_rate=" << c.sample_rate << "\n";
  os << "data.segment_seconds=" << c.segment_seconds << "\n";
  os << "data.overlap_seconds=" << c.overlap_seconds << "\n";
  os << "data.target_dbfs=" << c.target_dbfs << "\n";
  os << "data.floor_db=" << c.floor_db << "\n";
  os << "stft.win=" << c.stft.win_length << "\n";
  os << "stft.hop=" << c.stft.hop << "\n";
  os << "stft.fft=" << c.stft.fft_size << "\n";
  os << "codec.factor=" << c.codec.downsample_factor << "\n";
  os << "codec.latent_channels=" << c.codec.latent_channels << "\n";
  os << "codec.width=" << c.codec.base_width << "\n";
  os << "codec.perceptual_weight=" << c.codec.perceptual_weight << "\n";
  os << "codec.kl_weight=" << c.codec.kl_weight << "\n";
  os << "ldm.widths=" << join(c.unet_widths) << "\n";
  os << "ldm.layers=" << c.unet_layers << "\n";
  os << "ldm.attn_stages=" << c.attn_stages << "\n";
  os << "ldm.t_dim=" << c.t_dim << "\n";
  os << "ldm.d_tau=" << c.d_tau << "\n";
  os << "ldm.T=" << c.T << "\n";
  os << "ldm.beta_start=" << c.beta_start << "\n";
  os << "ldm.beta_end=" << c.beta_end << "\n";
  os << "ldm.beta_shape=" << c.beta_shape << "\n";
  os << "ldm.strength=" << c.strength << "\n";
  os << "ldm.sample_steps=" << c.sample_steps << "\n";
  os << "ldm.dropout=" << c.condition_dropout << "\n";
  os << "vocoder.widths=" << join(c.voc.widths) << "\n";
  os << "vocoder.up_factors=" << join(c.voc.up_factors) << "\n";
  os << "vocoder.latent_channels=" << c.voc.latent_channels << "\n";
  os << "vocoder.encoder_width=" << c.voc.encoder_width << "\n";
  os << "vocoder.T=" << c.voc.T << "\n";
  os << "vocoder.steps=" << c.voc.inference_steps << "\n";
  os << "vocoder.crop=" << c.vocoder_crop << "\n";
  os << "classifier.widths=" << join(c.clf.widths) << "\n";
  os << "classifier.feature_dim=" << c.clf.feature_dim << "\n";
  const auto dump_train = [&os](const char* name, const TrainConfig& t) {
    os << "train." << name << ".lr=" << t.lr << "\n";
    os << "train." << name << ".batch=" << t.batch << "\n";
    os << "train." << name << ".steps=" << t.steps << "\n";
    os << "train." << name << ".interval=" << t.checkpoint_interval << "\n";
    os << "train." << name << ".seed=" << t.seed << "\n";
  };
  dump_train("codec", c.train_codec);
  dump_train("ldm", c.train_ldm);
  dump_train("vocoder", c.train_vocoder);
  dump_train("classifier", c.train_classifier);
  return os.str();
}

namespace {

PipelineConfig parse_lines(std::istream& in, const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> kv;
  std::string preset;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: " + origin + ":" + std::to_string(lineno) +
                        " expects key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "preset")
      preset = value;
    else
      kv.emplace_back(key, value);
  }
  PipelineConfig cfg = preset_config(preset.empty() ? "toy" : preset);
  for (const auto& [k, v] : kv) apply_override(cfg, k, v);
  cfg.validate();
  return cfg;
}

}  // namespace

PipelineConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  return parse_lines(in, path);
}

PipelineConfig config_from_text(const std::string& text) {
  std::istringstream in(text);
  return parse_lines(in, "<text>");
}

std::string default_cache_dir() {
  const char* env = std::getenv("MST_CACHE_DIR");
  return env != nullptr && *env != '\0' ? std::string(env)
                                        : std::string("mst_cache");
}

}  // namespace mst::pipeline
