#include "teller/synth_data.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "teller/audio_frontend.hpp"
#include "teller/trainer.hpp"

namespace teller::synth {

namespace fs = std::filesystem;
using nlohmann::json;

void SynthConfig::validate() const {
  if (!(clip_seconds > 0.0)) throw ValidationError("synth: clip_seconds must be positive");
  const double chunks = clip_seconds / kKnotSeconds;
  if (std::abs(chunks - std::round(chunks)) > 1e-9) {
    throw ValidationError("synth: clip_seconds must be a multiple of 0.2");
  }
  audio::chunk_length(sample_rate_hz);
  if (bands <= 0) throw ValidationError("synth: bands must be positive");
  if (coupling.size() != 0) {
    if (coupling.rows() != bands || coupling.cols() != motion::kLatentSize) {
      throw ValidationError("synth: coupling must be bands x 75");
    }
    if (!all_finite(coupling)) throw ValidationError("synth: coupling must be finite");
  }
  if (!(noise_std >= 0.0)) throw ValidationError("synth: noise_std must be non-negative");
  if (envelope_levels < 0 || envelope_levels == 1) {
    throw ValidationError("synth: envelope_levels must be 0 or at least 2");
  }
  if (!(tone_amplitude > 0.0) || tone_amplitude * bands * 2.0 > 1.0 + 1e-12) {
    throw ValidationError("synth: tone amplitude would clip");
  }
}

int SynthConfig::frames() const {
  return static_cast<int>(std::lround(clip_seconds / kKnotSeconds)) * 4;
}

int SynthConfig::samples() const {
  return static_cast<int>(std::lround(clip_seconds / kKnotSeconds)) * audio::chunk_length(sample_rate_hz);
}

Matrix SynthConfig::resolved_coupling() const {
  return coupling.size() != 0 ? coupling : default_coupling(bands, seed);
}

Matrix default_coupling(int bands, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0xc0));
  std::uniform_real_distribution<double> mag(0.5, 1.5);
  std::bernoulli_distribution sign(0.5);
  Matrix c = Matrix::Zero(bands, motion::kLatentSize);
  for (int i = 0; i < motion::kLatentSize; ++i) {
    const double m = mag(rng);
    c(i % bands, i) = sign(rng) ? m : -m;
  }
  return c;
}

double band_frequency(int band, int bands) {
  if (bands == 1) return 700.0;
  return 250.0 * std::pow(3500.0 / 250.0, static_cast<double>(band) / (bands - 1));
}

std::uint64_t clip_seed(std::uint64_t master_seed, int index) {
  return mix_seed(master_seed, static_cast<std::uint64_t>(index) + 1);
}

bool is_validation(int index, int n_clips) {
  const int n_train = n_clips - n_clips / 10;
  return index >= n_train;
}

SynthClip generate_clip(const SynthConfig& cfg) { return generate_clip(cfg, cfg.seed); }

SynthClip generate_clip(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Matrix coupling = cfg.resolved_coupling();
  std::mt19937_64 rng(seed);
  const int chunks = cfg.frames() / 4;
  const int chunk_len = audio::chunk_length(cfg.sample_rate_hz);

  Matrix knots(chunks + 1, cfg.bands);
  std::uniform_real_distribution<double> cont(0.0, 1.0);
  std::uniform_int_distribution<int> level(0, std::max(cfg.envelope_levels - 1, 0));
  for (Eigen::Index i = 0; i < knots.size(); ++i) {
    knots.data()[i] = cfg.envelope_levels == 0 ? cont(rng)
                                               : static_cast<double>(level(rng)) / (cfg.envelope_levels - 1);
  }
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::vector<double> phases(static_cast<std::size_t>(cfg.bands) * 2);
  for (auto& p : phases) p = phase(rng);

  SynthClip clip;
  clip.sample_rate_hz = cfg.sample_rate_hz;
  clip.audio.assign(static_cast<std::size_t>(cfg.samples()), 0.0);
  for (int b = 0; b < cfg.bands; ++b) {
    const double f = band_frequency(b, cfg.bands);
    const double w0 = 2.0 * std::numbers::pi * f / cfg.sample_rate_hz;
    const double w1 = w0 * 1.05;
    for (std::size_t n = 0; n < clip.audio.size(); ++n) {
      const auto k = static_cast<Eigen::Index>(n / static_cast<std::size_t>(chunk_len));
      const double frac = static_cast<double>(n % static_cast<std::size_t>(chunk_len)) / chunk_len;
      const double env = knots(k, b) + frac * (knots(k + 1, b) - knots(k, b));
      const double t = static_cast<double>(n);
      clip.audio[n] += cfg.tone_amplitude * env *
                       (std::sin(w0 * t + phases[2 * b]) + std::sin(w1 * t + phases[2 * b + 1]));
    }
  }

  const int frames = cfg.frames();
  clip.envelopes.resize(frames, cfg.bands);
  for (int fr = 0; fr < frames; ++fr) {
    const int k = fr / 4;
    const double frac = (fr % 4) / 4.0;
    for (int b = 0; b < cfg.bands; ++b) {
      clip.envelopes(fr, b) = knots(k, b) + frac * (knots(k + 1, b) - knots(k, b));
    }
  }
  const Matrix drive = cfg.nonlinear ? Matrix(clip.envelopes.array().square()) : clip.envelopes;
  clip.coupled = drive * coupling;

  std::normal_distribution<double> noise(0.0, 1.0);
  clip.motion.frame_rate_hz = kMotionRateHz;
  for (int fr = 0; fr < frames; ++fr) {
    std::array<double, motion::kLatentSize> v{};
    for (int i = 0; i < motion::kLatentSize; ++i) {
      v[static_cast<std::size_t>(i)] = clip.coupled(fr, i) + (cfg.noise_std > 0.0 ? cfg.noise_std * noise(rng) : 0.0);
    }
    clip.motion.frames.push_back(motion::MotionLatent::from_flat(v));
  }
  return clip;
}

std::vector<motion::MotionWindow> clip_windows(const SynthClip& clip) {
  return motion::split_windows(clip.motion.frames, 4, clip.motion.frame_rate_hz);
}

// ---------------------------------------------------------------------------

std::string config_to_json(const SynthConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["clip_seconds"] = cfg.clip_seconds;
  j["sample_rate_hz"] = cfg.sample_rate_hz;
  j["bands"] = cfg.bands;
  j["noise_std"] = cfg.noise_std;
  j["envelope_levels"] = cfg.envelope_levels;
  j["nonlinear"] = cfg.nonlinear;
  j["tone_amplitude"] = cfg.tone_amplitude;
  const Matrix c = cfg.resolved_coupling();
  json rows = json::array();
  for (Eigen::Index r = 0; r < c.rows(); ++r) {
    rows.push_back(std::vector<double>(c.row(r).data(), c.row(r).data() + c.cols()));
  }
  j["coupling"] = rows;
  return j.dump(2) + "\n";
}

SynthConfig config_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    SynthConfig cfg;
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.clip_seconds = j.at("clip_seconds").get<double>();
    cfg.sample_rate_hz = j.at("sample_rate_hz").get<int>();
    cfg.bands = j.at("bands").get<int>();
    cfg.noise_std = j.at("noise_std").get<double>();
    cfg.envelope_levels = j.at("envelope_levels").get<int>();
    cfg.nonlinear = j.at("nonlinear").get<bool>();
    cfg.tone_amplitude = j.at("tone_amplitude").get<double>();
    const auto& rows = j.at("coupling");
    cfg.coupling.resize(static_cast<Eigen::Index>(rows.size()), motion::kLatentSize);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto vals = rows[r].get<std::vector<double>>();
      if (vals.size() != static_cast<std::size_t>(motion::kLatentSize)) throw FormatError("corpus.json: bad coupling row");
      for (int c = 0; c < motion::kLatentSize; ++c) cfg.coupling(static_cast<Eigen::Index>(r), c) = vals[static_cast<std::size_t>(c)];
    }
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw FormatError(std::string("corpus.json: ") + e.what());
  } catch (const ValidationError& e) {
    throw FormatError(std::string("corpus.json: ") + e.what());
  }
}

std::vector<CorpusEntry> Corpus::split(bool validation) const {
  std::vector<CorpusEntry> out;
  for (const auto& e : entries) {
    if (e.validation == validation) out.push_back(e);
  }
  return out;
}

std::string Corpus::path(const std::string& rel) const { return (fs::path(dir) / rel).string(); }

Corpus write_corpus(const SynthConfig& cfg_in, int n_clips, const std::string& dir) {
  if (n_clips < 1) throw ValidationError("corpus: n_clips must be at least 1");
  SynthConfig cfg = cfg_in;
  cfg.validate();
  cfg.coupling = cfg.resolved_coupling();
  fs::create_directories(dir);

  Corpus corpus;
  corpus.dir = dir;
  corpus.config = cfg;
  corpus.entries.resize(static_cast<std::size_t>(n_clips));
  train::parallel_for(static_cast<std::size_t>(n_clips), [&](std::size_t i) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "clip_%05zu", i);
    CorpusEntry& e = corpus.entries[i];
    e.index = static_cast<int>(i);
    e.seed = clip_seed(cfg.seed, e.index);
    e.audio = std::string(stem) + ".wav";
    e.motion = std::string(stem) + ".tmlt";
    e.validation = is_validation(e.index, n_clips);
    const SynthClip clip = generate_clip(cfg, e.seed);
    audio::write_wav(corpus.path(e.audio), {clip.audio, clip.sample_rate_hz});
    motion::write_motion_file(corpus.path(e.motion), clip.motion);
  });

  std::ofstream manifest(corpus.path("manifest.jsonl"));
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir);
  for (const auto& e : corpus.entries) {
    json j;
    j["index"] = e.index;
    j["seed"] = e.seed;
    j["audio"] = e.audio;
    j["motion"] = e.motion;
    j["split"] = e.validation ? "val" : "train";
    manifest << j.dump() << "\n";
  }
  std::ofstream meta(corpus.path("corpus.json"));
  if (!meta) throw std::runtime_error("cannot write corpus.json in " + dir);
  meta << config_to_json(cfg);
  return corpus;
}

Corpus read_corpus(const std::string& dir) {
  Corpus corpus;
  corpus.dir = dir;
  {
    std::ifstream in(corpus.path("corpus.json"));
    if (!in) throw std::runtime_error("missing corpus.json in " + dir);
    std::stringstream ss;
    ss << in.rdbuf();
    corpus.config = config_from_json(ss.str());
  }
  std::ifstream in(corpus.path("manifest.jsonl"));
  if (!in) throw std::runtime_error("missing manifest.jsonl in " + dir);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      CorpusEntry e;
      e.index = j.at("index").get<int>();
      e.seed = j.at("seed").get<std::uint64_t>();
      e.audio = j.at("audio").get<std::string>();
      e.motion = j.at("motion").get<std::string>();
      e.validation = j.at("split").get<std::string>() == "val";
      corpus.entries.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw FormatError(std::string("manifest.jsonl: ") + ex.what());
    }
  }
  return corpus;
}

SynthClip regenerate(const Corpus& corpus, const CorpusEntry& entry) {
  return generate_clip(corpus.config, entry.seed);
}

}  // namespace teller::synth
