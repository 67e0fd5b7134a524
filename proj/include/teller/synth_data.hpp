#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "teller/common.hpp"
#include "teller/motion_latent.hpp"

namespace teller::synth {

inline constexpr double kMotionRateHz = 20.0;
inline constexpr double kKnotSeconds = 0.2;

struct SynthConfig {
  std::uint64_t seed = 0;
  double clip_seconds = 1.0;
  int sample_rate_hz = 16000;
  int bands = 4;
  // bands x 75; empty means default_coupling(bands, seed).
  Matrix coupling;
  double noise_std = 0.0;
  // Envelope knots are drawn from this many evenly spaced levels in [0, 1];
  // 0 draws them continuously.
  int envelope_levels = 3;
  // Couple squared envelopes instead of envelopes.
  bool nonlinear = false;
  double tone_amplitude = 0.1;  // per partial; two partials per band

  void validate() const;
  int frames() const;
  int samples() const;
  // Coupling in use: the explicit one, else the seeded default.
  Matrix resolved_coupling() const;
};

// One band per coordinate (coordinate i -> band i % bands), signed weight
// with magnitude in [0.5, 1.5].
Matrix default_coupling(int bands, std::uint64_t seed);

// Centre frequency of band b.
double band_frequency(int band, int bands);

struct SynthClip {
  std::vector<double> audio;
  int sample_rate_hz = 16000;
  motion::MotionClip motion;  // 20 Hz
  Matrix envelopes;           // frames x bands, sampled at motion frame times
  Matrix coupled;             // frames x 75, noise-free coupled series
};

// Clip content is a pure function of (config, clip_seed); the coupling is
// shared across clips.
SynthClip generate_clip(const SynthConfig& cfg);
SynthClip generate_clip(const SynthConfig& cfg, std::uint64_t clip_seed);

std::vector<motion::MotionWindow> clip_windows(const SynthClip& clip);

std::uint64_t clip_seed(std::uint64_t master_seed, int index);
bool is_validation(int index, int n_clips);

struct CorpusEntry {
  int index = 0;
  std::uint64_t seed = 0;
  std::string audio;   // paths relative to the corpus directory
  std::string motion;
  bool validation = false;
};

struct Corpus {
  std::string dir;
  SynthConfig config;
  std::vector<CorpusEntry> entries;

  std::vector<CorpusEntry> split(bool validation) const;
  std::string path(const std::string& rel) const;
};

// Writes clip_XXXXX.wav / clip_XXXXX.tmlt, manifest.jsonl and corpus.json.
Corpus write_corpus(const SynthConfig& cfg, int n_clips, const std::string& dir);
Corpus read_corpus(const std::string& dir);

// Regenerates the ground truth of one entry from its stored seed.
SynthClip regenerate(const Corpus& corpus, const CorpusEntry& entry);

std::string config_to_json(const SynthConfig& cfg);
SynthConfig config_from_json(const std::string& text);

}  // namespace teller::synth
