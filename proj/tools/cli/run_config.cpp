#include "run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace teller::cli {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace {

std::string b(bool v) { return v ? "true" : "false"; }
std::string i(long long v) { return std::to_string(v); }
std::string d(double v) { return format_double(v); }

std::vector<KeySpec> build_specs() {
  const auto std_cfg = exp::ArExperimentConfig::standard();
  const auto& s = std_cfg.synth;
  const auto& q = std_cfg.codec;
  const auto& qt = std_cfg.codec_train;
  const auto& a = std_cfg.ar;
  const auto& at = std_cfg.ar_train;
  const etm::ETMConfig e;
  const etm::EtmSynthConfig es;
  const ar::SamplerConfig sp;
  const pipeline::RasterConfig rc;
  using K = KeyType;
  return {
      {"synth.seed", K::kUInt, i(static_cast<long long>(s.seed)), "corpus master seed"},
      {"synth.clips", K::kInt, i(std_cfg.clips), "number of clips"},
      {"synth.clip_seconds", K::kDouble, d(s.clip_seconds), "clip length"},
      {"synth.sample_rate_hz", K::kInt, i(s.sample_rate_hz), "16000 | 24000 | 48000"},
      {"synth.bands", K::kInt, i(s.bands), "tone bands driving the motion"},
      {"synth.noise_std", K::kDouble, d(s.noise_std), "motion noise"},
      {"synth.envelope_levels", K::kInt, i(s.envelope_levels), "0 = continuous envelopes"},
      {"synth.nonlinear", K::kBool, b(s.nonlinear), "couple squared envelopes"},
      {"synth.tone_amplitude", K::kDouble, d(s.tone_amplitude), "per partial"},

      {"frontend.bins", K::kInt, i(std_cfg.frontend.bins), "mel bins per frame"},
      {"frontend.frame_ms", K::kDouble, d(std_cfg.frontend.frame_ms), "analysis frame"},

      {"rvq.window_frames", K::kInt, i(q.window_frames), "frames per window"},
      {"rvq.slots", K::kInt, i(q.slots), "latent slots per window"},
      {"rvq.stages", K::kInt, i(q.residual_stages), "residual stages per slot"},
      {"rvq.latent_dim", K::kInt, i(q.latent_dim), "per-slot latent width"},
      {"rvq.codebook_size", K::kInt, i(q.codebook_size), "K"},
      {"rvq.hidden_mult", K::kInt, i(q.hidden_mult), "FFN width multiplier"},
      {"rvq.activation", K::kString, "gelu", "gelu | identity"},
      {"rvq.commitment_weight", K::kDouble, d(q.commitment_weight), "beta"},
      {"rvq.ema_decay", K::kDouble, d(q.ema_decay), "codebook EMA"},
      {"rvq.dead_fraction", K::kDouble, d(q.dead_fraction), "re-seed threshold"},

      {"rvq_train.lr_start", K::kDouble, d(qt.lr_start), ""},
      {"rvq_train.lr_end", K::kDouble, d(qt.lr_end), ""},
      {"rvq_train.epochs", K::kInt, i(qt.epochs), ""},
      {"rvq_train.batch_size", K::kInt, i(qt.batch_size), ""},
      {"rvq_train.seed", K::kUInt, "7", "init and shuffling"},
      {"rvq_train.weight_decay", K::kDouble, d(qt.weight_decay), ""},
      {"rvq_train.grad_clip", K::kDouble, d(qt.grad_clip), "0 disables"},

      {"ar.d_model", K::kInt, i(a.d_model), ""},
      {"ar.layers", K::kInt, i(a.layers), ""},
      {"ar.heads", K::kInt, i(a.heads), "attention heads"},
      {"ar.ffn_mult", K::kInt, i(a.ffn_mult), ""},
      {"ar.window", K::kInt, i(a.window), "attention span in positions, 0 = unbounded"},
      {"ar.alibi", K::kBool, b(a.alibi), ""},
      {"ar.reg_weight", K::kDouble, d(a.reg_weight), "head-gap regulariser weight"},
      {"ar.mode", K::kString, "dual", "dual | single | both"},

      {"ar_train.lr_start", K::kDouble, d(at.lr_start), ""},
      {"ar_train.lr_end", K::kDouble, d(at.lr_end), ""},
      {"ar_train.epochs", K::kInt, i(at.epochs), ""},
      {"ar_train.batch_size", K::kInt, i(at.batch_size), ""},
      {"ar_train.seed", K::kUInt, i(static_cast<long long>(std_cfg.seed)), "init and shuffling"},
      {"ar_train.weight_decay", K::kDouble, d(at.weight_decay), ""},
      {"ar_train.grad_clip", K::kDouble, d(at.grad_clip), "0 disables"},

      {"etm.channels", K::kInt, i(e.channels), ""},
      {"etm.heads", K::kInt, i(e.heads), ""},
      {"etm.patch", K::kInt, i(e.patch), "patch side of the toy frame codec"},
      {"etm.time_embedding", K::kBool, b(e.time_embedding), ""},
      {"etm.zero_init_output", K::kBool, b(e.zero_init_output), ""},

      {"etm_synth.samples", K::kInt, "32", "synthetic training sequences"},
      {"etm_synth.size", K::kInt, i(es.height), "frame side"},
      {"etm_synth.jitter_std", K::kDouble, d(es.jitter_std), ""},
      {"etm_synth.noise_std", K::kDouble, d(es.noise_std), ""},
      {"etm_synth.margin", K::kDouble, d(es.margin), "box margin over the landmark diagonal"},

      {"etm_train.lr_start", K::kDouble, "0.01", ""},
      {"etm_train.lr_end", K::kDouble, "0.0001", ""},
      {"etm_train.epochs", K::kInt, "60", ""},
      {"etm_train.batch_size", K::kInt, "8", ""},
      {"etm_train.seed", K::kUInt, "1", ""},
      {"etm_train.weight_decay", K::kDouble, "0", ""},
      {"etm_train.grad_clip", K::kDouble, "0", "0 disables"},

      {"sampler.k", K::kInt, i(sp.k), "top-k, 1 = greedy"},
      {"sampler.temperature", K::kDouble, d(sp.temperature), ""},
      {"sampler.seed", K::kUInt, i(static_cast<long long>(sp.seed)), ""},

      {"pipeline.threaded", K::kBool, "true", "one thread per stage"},
      {"pipeline.queue_capacity", K::kInt, "1", ""},
      {"raster.size", K::kInt, i(rc.size), ""},
      {"raster.sigma", K::kDouble, d(rc.sigma), ""},
      {"raster.scale", K::kDouble, d(rc.scale), ""},

      {"bench.chunks", K::kInt, "5", ""},
      {"bench.mode", K::kString, "sequential", "sequential | pipelined"},
      {"sweep.tokens", K::kIntList, "8,16,32,64", "tokens per window, comma separated"},
  };
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto z = s.find_last_not_of(" \t\r");
  return s.substr(a, z - a + 1);
}

template <typename T>
bool parse_num(const std::string& s, T& out) {
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1") {
    out = true;
    return true;
  }
  if (s == "false" || s == "0") {
    out = false;
    return true;
  }
  return false;
}

bool parse_list(const std::string& s, std::vector<int>& out) {
  out.clear();
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    int v = 0;
    if (!parse_num(trim(item), v)) return false;
    out.push_back(v);
  }
  return !out.empty();
}

}  // namespace

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = build_specs();
  return specs;
}

RunConfig::RunConfig() {
  for (const auto& s : key_specs()) set(s.name, s.default_value);
}

const KeySpec& RunConfig::spec(const std::string& key) const {
  for (const auto& s : key_specs()) {
    if (s.name == key) return s;
  }
  throw UsageError("unknown config key '" + key + "'");
}

void RunConfig::set(const std::string& key_in, const std::string& value_in) {
  const std::string key = trim(key_in);
  const std::string value = trim(value_in);
  const KeySpec& s = spec(key);
  bool ok = true;
  std::string canon = value;
  switch (s.type) {
    case KeyType::kInt: {
      long long v = 0;
      ok = parse_num(value, v);
      if (ok) canon = std::to_string(v);
      break;
    }
    case KeyType::kUInt: {
      std::uint64_t v = 0;
      ok = parse_num(value, v);
      if (ok) canon = std::to_string(v);
      break;
    }
    case KeyType::kDouble: {
      double v = 0;
      ok = parse_num(value, v) && std::isfinite(v);
      if (ok) canon = format_double(v);
      break;
    }
    case KeyType::kBool: {
      bool v = false;
      ok = parse_bool(value, v);
      if (ok) canon = v ? "true" : "false";
      break;
    }
    case KeyType::kIntList: {
      std::vector<int> v;
      ok = parse_list(value, v);
      if (ok) {
        canon.clear();
        for (std::size_t k = 0; k < v.size(); ++k) canon += (k ? "," : "") + std::to_string(v[k]);
      }
      break;
    }
    case KeyType::kString:
      ok = !value.empty();
      break;
  }
  if (!ok) throw UsageError("bad value '" + value + "' for config key '" + key + "'");
  values_[key] = canon;
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw UsageError("expected key=value, got '" + assignment + "'");
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

void RunConfig::parse_text(const std::string& text, const std::string& origin) {
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.resize(hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    try {
      set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const UsageError& err) {
      throw UsageError(origin + ":" + std::to_string(lineno) + ": " + err.what());
    }
  }
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  parse_text(ss.str(), path);
}

const std::string& RunConfig::get(const std::string& key) const {
  spec(key);
  return values_.at(key);
}

long long RunConfig::get_int(const std::string& key) const {
  long long v = 0;
  parse_num(get(key), v);
  return v;
}

std::uint64_t RunConfig::get_uint(const std::string& key) const {
  std::uint64_t v = 0;
  parse_num(get(key), v);
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  double v = 0;
  parse_num(get(key), v);
  return v;
}

bool RunConfig::get_bool(const std::string& key) const { return get(key) == "true"; }

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  std::vector<int> v;
  parse_list(get(key), v);
  return v;
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(serialize())));
  return buf;
}

// ---- typed views ----

synth::SynthConfig RunConfig::synth() const {
  synth::SynthConfig c;
  c.seed = get_uint("synth.seed");
  c.clip_seconds = get_double("synth.clip_seconds");
  c.sample_rate_hz = static_cast<int>(get_int("synth.sample_rate_hz"));
  c.bands = static_cast<int>(get_int("synth.bands"));
  c.noise_std = get_double("synth.noise_std");
  c.envelope_levels = static_cast<int>(get_int("synth.envelope_levels"));
  c.nonlinear = get_bool("synth.nonlinear");
  c.tone_amplitude = get_double("synth.tone_amplitude");
  return c;
}

int RunConfig::clips() const { return static_cast<int>(get_int("synth.clips")); }

audio::FrontendConfig RunConfig::frontend() const {
  audio::FrontendConfig c;
  c.bins = static_cast<int>(get_int("frontend.bins"));
  c.frame_ms = get_double("frontend.frame_ms");
  return c;
}

rvq::RVQConfig RunConfig::rvq() const {
  rvq::RVQConfig c;
  c.window_frames = static_cast<int>(get_int("rvq.window_frames"));
  c.slots = static_cast<int>(get_int("rvq.slots"));
  c.residual_stages = static_cast<int>(get_int("rvq.stages"));
  c.latent_dim = static_cast<int>(get_int("rvq.latent_dim"));
  c.codebook_size = static_cast<int>(get_int("rvq.codebook_size"));
  c.hidden_mult = static_cast<int>(get_int("rvq.hidden_mult"));
  const auto& act = get("rvq.activation");
  if (act == "gelu") {
    c.activation = rvq::Activation::kGelu;
  } else if (act == "identity") {
    c.activation = rvq::Activation::kIdentity;
  } else {
    throw UsageError("rvq.activation must be gelu or identity");
  }
  c.commitment_weight = get_double("rvq.commitment_weight");
  c.ema_decay = get_double("rvq.ema_decay");
  c.dead_fraction = get_double("rvq.dead_fraction");
  return c;
}

train::TrainConfig RunConfig::train(const std::string& prefix) const {
  train::TrainConfig c;
  c.lr_start = get_double(prefix + ".lr_start");
  c.lr_end = get_double(prefix + ".lr_end");
  c.epochs = static_cast<int>(get_int(prefix + ".epochs"));
  c.batch_size = static_cast<int>(get_int(prefix + ".batch_size"));
  c.seed = get_uint(prefix + ".seed");
  c.weight_decay = get_double(prefix + ".weight_decay");
  c.grad_clip = get_double(prefix + ".grad_clip");
  return c;
}

ar::ARConfig RunConfig::ar(const rvq::RVQConfig& codec, int audio_dim, bool dual_head) const {
  ar::ARConfig c;
  c.vocab = codec.codebook_size;
  c.tokens_per_chunk = codec.tokens_per_window();
  c.audio_dim = audio_dim;
  c.dual_head = dual_head;
  c.d_model = static_cast<int>(get_int("ar.d_model"));
  c.layers = static_cast<int>(get_int("ar.layers"));
  c.heads = static_cast<int>(get_int("ar.heads"));
  c.ffn_mult = static_cast<int>(get_int("ar.ffn_mult"));
  c.window = static_cast<int>(get_int("ar.window"));
  c.alibi = get_bool("ar.alibi");
  c.reg_weight = get_double("ar.reg_weight");
  return c;
}

etm::ETMConfig RunConfig::etm() const {
  etm::ETMConfig c;
  c.channels = static_cast<int>(get_int("etm.channels"));
  c.heads = static_cast<int>(get_int("etm.heads"));
  c.patch = static_cast<int>(get_int("etm.patch"));
  c.time_embedding = get_bool("etm.time_embedding");
  c.zero_init_output = get_bool("etm.zero_init_output");
  return c;
}

etm::EtmSynthConfig RunConfig::etm_synth() const {
  etm::EtmSynthConfig c;
  c.height = c.width = static_cast<int>(get_int("etm_synth.size"));
  c.jitter_std = get_double("etm_synth.jitter_std");
  c.noise_std = get_double("etm_synth.noise_std");
  c.margin = get_double("etm_synth.margin");
  return c;
}

ar::SamplerConfig RunConfig::sampler() const {
  ar::SamplerConfig c;
  c.k = static_cast<int>(get_int("sampler.k"));
  c.temperature = get_double("sampler.temperature");
  c.seed = get_uint("sampler.seed");
  return c;
}

pipeline::RasterConfig RunConfig::raster() const {
  pipeline::RasterConfig c;
  c.size = static_cast<int>(get_int("raster.size"));
  c.sigma = get_double("raster.sigma");
  c.scale = get_double("raster.scale");
  return c;
}

pipeline::PipelineConfig RunConfig::pipeline(const audio::FrontendConfig& frontend) const {
  pipeline::PipelineConfig c;
  c.sampler = sampler();
  c.frontend = frontend;
  c.raster = raster();
  c.threaded = get_bool("pipeline.threaded");
  c.queue_capacity = static_cast<std::size_t>(std::max<long long>(1, get_int("pipeline.queue_capacity")));
  return c;
}

exp::ArExperimentConfig RunConfig::experiment(const rvq::RVQConfig& codec, bool dual_head) const {
  exp::ArExperimentConfig c;
  c.synth = synth();
  c.clips = clips();
  c.frontend = frontend();
  c.codec = codec;
  c.codec_train = train("rvq_train");
  c.ar = ar(codec, c.frontend.bins, dual_head);
  c.ar_train = train("ar_train");
  c.seed = get_uint("ar_train.seed");
  return c;
}

}  // namespace teller::cli
