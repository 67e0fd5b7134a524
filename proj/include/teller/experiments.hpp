#pragma once

// End-to-end helpers shared by the command-line tool, the acceptance runner
// and the Python bindings: corpus -> codec -> token sequences -> AR model.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "teller/ar_model.hpp"
#include "teller/audio_frontend.hpp"
#include "teller/rvq.hpp"
#include "teller/synth_data.hpp"
#include "teller/trainer.hpp"

namespace teller::exp {

struct ClipData {
  int index = 0;
  bool validation = false;
  std::vector<audio::AudioEmbedding> audio;   // one per 200 ms chunk
  std::vector<motion::MotionWindow> windows;  // one 4-frame window per chunk
  Matrix coupled;                             // ground-truth frames x 75
};

// Generates clips in memory (same content as write_corpus would store).
std::vector<ClipData> make_clips(const synth::SynthConfig& cfg, int n_clips, const audio::FrontendConfig& frontend);
// Loads a corpus from disk; ground truth is regenerated from each entry's seed.
std::vector<ClipData> load_clips(const synth::Corpus& corpus, const audio::FrontendConfig& frontend);

std::vector<ClipData> split(const std::vector<ClipData>& clips, bool validation);
std::vector<motion::MotionWindow> all_windows(const std::vector<ClipData>& clips);

std::vector<ar::SequenceLayout> build_layouts(const std::vector<ClipData>& clips, const rvq::RVQCodec& codec,
                                              const ar::ARConfig& cfg);

// Mean over columns of the Pearson correlation of matching columns.
// Columns with zero variance in either input are skipped.
double mean_pearson(const Matrix& a, const Matrix& b);

struct DecodedClip {
  std::vector<Token> tokens;
  Matrix motion;  // frames x 75 at the codec frame rate
};
DecodedClip decode_clip(const ar::ARModel& model, const rvq::RVQCodec& codec, const ClipData& clip,
                        const ar::SamplerConfig& sampler);

// Greedy decode of every clip; Pearson over the concatenated frames.
double greedy_pearson(const ar::ARModel& model, const rvq::RVQCodec& codec, const std::vector<ClipData>& clips);
// Same but against the codec reconstruction of the true windows (the ceiling).
double codec_pearson(const rvq::RVQCodec& codec, const std::vector<ClipData>& clips);

// ---- criterion-scale experiment ----

struct ArExperimentConfig {
  synth::SynthConfig synth;
  int clips = 500;
  audio::FrontendConfig frontend;
  rvq::RVQConfig codec;
  train::TrainConfig codec_train;
  ar::ARConfig ar;
  train::TrainConfig ar_train;
  std::uint64_t seed = 1;

  // Defaults used by the acceptance runner and `teller train ar`.
  static ArExperimentConfig standard();
  // Four-band corpus for the tokens-per-window sweep; with two bands every
  // budget nearly memorises the 81 distinct windows and the ordering is noise.
  static ArExperimentConfig sweep_standard();
};

struct ArExperimentResult {
  double codec_val_recon = 0.0;
  double final_train_ce = 0.0;  // per token, last epoch, excluding the regularizer
  double val_ce = 0.0;
  double val_pearson = 0.0;
  double codec_ceiling_pearson = 0.0;
  double mean_abs_gap = 0.0;     // per-position |L_head0 - L_head1| on training data
  std::vector<train::EpochRecord> ar_history;
  double seconds = 0.0;
};

using Progress = std::function<void(const std::string&)>;

rvq::RVQCodec train_codec(const std::vector<ClipData>& train_clips, const rvq::RVQConfig& cfg,
                          const train::TrainConfig& tc, std::uint64_t seed);
ArExperimentResult run_ar_experiment(const ArExperimentConfig& cfg, const std::vector<ClipData>& clips,
                                     const rvq::RVQCodec& codec, ar::ARModel* trained = nullptr,
                                     const Progress& progress = {});

// ---- tokens-per-window sweep ----

struct SweepRow {
  int frames = 4;
  int tokens = 32;
  double val_loss = 0.0;  // held-out reconstruction error
  double train_loss = 0.0;
};

std::vector<SweepRow> rvq_sweep(const std::vector<ClipData>& clips, const rvq::RVQConfig& base,
                                const std::vector<int>& tokens, const train::TrainConfig& tc, std::uint64_t seed,
                                const Progress& progress = {});

// ---- regularizer experiment ----

struct RegularizerResult {
  double gap_without = 0.0;
  double gap_with = 0.0;
  double ratio() const { return gap_without > 0.0 ? gap_with / gap_without : 0.0; }
};

// Controlled AR task where head-0 labels are a function of the audio and
// head-1 labels are uniform over `noise_values` symbols, so the two heads have
// different irreducible losses. Trains twice with identical seeds, with the
// regularizer weight at 0 and at 1, and reports the mean per-position gap.
RegularizerResult regularizer_experiment(std::uint64_t seed, int epochs = 30, int noise_values = 4,
                                         int train_sequences = 1024);

}  // namespace teller::exp
