#include "teller/experiments.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <random>

namespace teller::exp {

namespace {

ClipData clip_from(int index, bool validation, const std::vector<double>& samples, int rate,
                   const motion::MotionClip& motion, const Matrix& coupled, const audio::FrontendConfig& frontend) {
  ClipData c;
  c.index = index;
  c.validation = validation;
  for (const auto& ch : audio::chunk_stream(samples, rate)) c.audio.push_back(audio::embed_chunk(ch, frontend));
  c.windows = motion::split_windows(motion.frames, 4, motion.frame_rate_hz);
  c.coupled = coupled;
  if (c.audio.size() != c.windows.size()) throw ValidationError("clip " + std::to_string(index) + ": audio and motion lengths differ");
  return c;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::vector<ClipData> make_clips(const synth::SynthConfig& cfg, int n_clips, const audio::FrontendConfig& frontend) {
  if (n_clips < 1) throw ValidationError("make_clips: need at least one clip");
  std::vector<ClipData> out(static_cast<std::size_t>(n_clips));
  train::parallel_for(out.size(), [&](std::size_t i) {
    const int idx = static_cast<int>(i);
    const auto clip = synth::generate_clip(cfg, synth::clip_seed(cfg.seed, idx));
    out[i] = clip_from(idx, synth::is_validation(idx, n_clips), clip.audio, clip.sample_rate_hz, clip.motion,
                       clip.coupled, frontend);
  });
  return out;
}

std::vector<ClipData> load_clips(const synth::Corpus& corpus, const audio::FrontendConfig& frontend) {
  std::vector<ClipData> out(corpus.entries.size());
  train::parallel_for(out.size(), [&](std::size_t i) {
    const auto& e = corpus.entries[i];
    const auto pcm = audio::read_wav(corpus.path(e.audio));
    const auto motion = motion::read_motion_file(corpus.path(e.motion));
    const auto truth = synth::regenerate(corpus, e);
    out[i] = clip_from(e.index, e.validation, pcm.samples, pcm.sample_rate_hz, motion, truth.coupled, frontend);
  });
  return out;
}

std::vector<ClipData> split(const std::vector<ClipData>& clips, bool validation) {
  std::vector<ClipData> out;
  for (const auto& c : clips) {
    if (c.validation == validation) out.push_back(c);
  }
  return out;
}

std::vector<motion::MotionWindow> all_windows(const std::vector<ClipData>& clips) {
  std::vector<motion::MotionWindow> out;
  for (const auto& c : clips) out.insert(out.end(), c.windows.begin(), c.windows.end());
  return out;
}

std::vector<ar::SequenceLayout> build_layouts(const std::vector<ClipData>& clips, const rvq::RVQCodec& codec,
                                              const ar::ARConfig& cfg) {
  if (cfg.tokens_per_chunk != codec.config().tokens_per_window()) {
    throw ValidationError("build_layouts: AR tokens per chunk differ from codec tokens per window");
  }
  std::vector<ar::SequenceLayout> out(clips.size());
  train::parallel_for(clips.size(), [&](std::size_t i) {
    const auto seq = codec.tokenize(clips[i].windows);
    out[i] = ar::build_sequence(cfg, clips[i].audio, seq.tokens);
  });
  return out;
}

double mean_pearson(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() < 2) throw ValidationError("mean_pearson: shape mismatch");
  double total = 0.0;
  int used = 0;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const Eigen::VectorXd x = a.col(c).array() - a.col(c).mean();
    const Eigen::VectorXd y = b.col(c).array() - b.col(c).mean();
    const double den = x.norm() * y.norm();
    if (den <= 1e-300) continue;
    total += x.dot(y) / den;
    ++used;
  }
  return used ? total / used : 0.0;
}

DecodedClip decode_clip(const ar::ARModel& model, const rvq::RVQCodec& codec, const ClipData& clip,
                        const ar::SamplerConfig& sampler) {
  DecodedClip out;
  ar::DecodeState state(model, sampler);
  std::vector<motion::MotionLatent> frames;
  for (const auto& emb : clip.audio) {
    const auto toks = model.decode_chunk(state, emb);
    out.tokens.insert(out.tokens.end(), toks.begin(), toks.end());
    const auto w = codec.decode(codec.dequantize(toks));
    frames.insert(frames.end(), w.frames.begin(), w.frames.end());
  }
  out.motion.resize(static_cast<Eigen::Index>(frames.size()), motion::kLatentSize);
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (int i = 0; i < motion::kLatentSize; ++i) out.motion(static_cast<Eigen::Index>(f), i) = frames[f].flat()[static_cast<std::size_t>(i)];
  }
  return out;
}

namespace {

Matrix stack(const std::vector<Matrix>& parts) {
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Matrix out(rows, parts.empty() ? 0 : parts[0].cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return out;
}

}  // namespace

double greedy_pearson(const ar::ARModel& model, const rvq::RVQCodec& codec, const std::vector<ClipData>& clips) {
  std::vector<Matrix> pred(clips.size()), truth(clips.size());
  ar::SamplerConfig greedy;
  greedy.k = 1;
  train::parallel_for(clips.size(), [&](std::size_t i) {
    pred[i] = decode_clip(model, codec, clips[i], greedy).motion;
    truth[i] = clips[i].coupled.topRows(pred[i].rows());
  });
  return mean_pearson(stack(pred), stack(truth));
}

double codec_pearson(const rvq::RVQCodec& codec, const std::vector<ClipData>& clips) {
  std::vector<Matrix> pred(clips.size()), truth(clips.size());
  train::parallel_for(clips.size(), [&](std::size_t i) {
    const auto rec = codec.detokenize(codec.tokenize(clips[i].windows));
    Matrix m(static_cast<Eigen::Index>(rec.size()) * 4, motion::kLatentSize);
    Eigen::Index r = 0;
    for (const auto& w : rec) {
      for (const auto& f : w.frames) {
        for (int k = 0; k < motion::kLatentSize; ++k) m(r, k) = f.flat()[static_cast<std::size_t>(k)];
        ++r;
      }
    }
    pred[i] = m;
    truth[i] = clips[i].coupled.topRows(m.rows());
  });
  return mean_pearson(stack(pred), stack(truth));
}

// ---- AR experiment ----

ArExperimentConfig ArExperimentConfig::standard() {
  ArExperimentConfig c;
  c.synth.seed = 1;
  c.synth.clip_seconds = 1.0;
  c.synth.bands = 2;
  c.synth.envelope_levels = 3;
  c.synth.noise_std = 0.0;
  c.clips = 500;
  c.frontend.bins = 32;

  c.codec = rvq::RVQConfig::for_tokens(32);
  c.codec.latent_dim = 8;
  c.codec.codebook_size = 64;
  c.codec.hidden_mult = 2;
  c.codec_train.lr_start = 2e-3;
  c.codec_train.lr_end = 1e-5;
  c.codec_train.epochs = 40;
  c.codec_train.batch_size = 64;

  c.ar.vocab = c.codec.codebook_size;
  c.ar.tokens_per_chunk = 32;
  c.ar.audio_dim = c.frontend.bins;
  c.ar.d_model = 64;
  c.ar.layers = 2;
  c.ar.heads = 4;
  c.ar.ffn_mult = 2;
  c.ar_train.lr_start = 3e-3;
  c.ar_train.lr_end = 1e-5;
  c.ar_train.epochs = 30;
  c.ar_train.batch_size = 16;
  return c;
}

ArExperimentConfig ArExperimentConfig::sweep_standard() {
  auto c = standard();
  c.synth.bands = 4;
  return c;
}

rvq::RVQCodec train_codec(const std::vector<ClipData>& train_clips, const rvq::RVQConfig& cfg,
                          const train::TrainConfig& tc, std::uint64_t seed) {
  auto codec = rvq::RVQCodec::random(cfg, seed);
  const auto windows = all_windows(train_clips);
  rvq::train_codebooks(codec, windows, tc);
  return codec;
}

ArExperimentResult run_ar_experiment(const ArExperimentConfig& cfg, const std::vector<ClipData>& clips,
                                     const rvq::RVQCodec& codec, ar::ARModel* trained, const Progress& progress) {
  const auto t0 = std::chrono::steady_clock::now();
  ArExperimentResult res;
  const auto train_clips = split(clips, false);
  const auto val_clips = split(clips, true);
  if (train_clips.empty()) throw ValidationError("ar experiment: no training clips");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const bool have_val = !val_clips.empty();
  res.codec_val_recon = have_val ? rvq::reconstruction_error(codec, all_windows(val_clips)) : nan;
  res.codec_ceiling_pearson = have_val ? codec_pearson(codec, val_clips) : nan;

  const auto train_data = build_layouts(train_clips, codec, cfg.ar);
  const auto val_data = build_layouts(val_clips, codec, cfg.ar);
  auto model = ar::ARModel::random(cfg.ar, mix_seed(cfg.seed, 0xa7));
  model.fit_audio_normalizer(train_data);
  train::FitHooks hooks;
  hooks.after_epoch = [&](int epoch) {
    if (progress) progress("ar epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.ar_train.epochs));
  };
  auto tc = cfg.ar_train;
  tc.seed = mix_seed(cfg.seed, 0xa8);
  const auto fit = ar::train_ar(model, train_data, tc, hooks);
  res.ar_history = fit.history;
  const auto tr = model.evaluate(train_data);
  res.final_train_ce = tr.per_token_ce();
  res.mean_abs_gap = tr.mean_abs_gap;
  res.val_ce = have_val ? model.evaluate(val_data).per_token_ce() : nan;
  res.val_pearson = have_val ? greedy_pearson(model, codec, val_clips) : nan;
  res.seconds = seconds_since(t0);
  if (trained) *trained = std::move(model);
  return res;
}

// ---- sweep ----

std::vector<SweepRow> rvq_sweep(const std::vector<ClipData>& clips, const rvq::RVQConfig& base,
                                const std::vector<int>& tokens, const train::TrainConfig& tc, std::uint64_t seed,
                                const Progress& progress) {
  const auto train_w = all_windows(split(clips, false));
  const auto val_w = all_windows(split(clips, true));
  if (train_w.empty() || val_w.empty()) throw ValidationError("rvq_sweep: need training and held-out clips");
  std::vector<SweepRow> rows;
  for (int t : tokens) {
    auto cfg = rvq::RVQConfig::for_tokens(t, base.slots);
    cfg.window_frames = base.window_frames;
    cfg.latent_dim = base.latent_dim;
    cfg.codebook_size = base.codebook_size;
    cfg.hidden_mult = base.hidden_mult;
    cfg.activation = base.activation;
    cfg.commitment_weight = base.commitment_weight;
    cfg.ema_decay = base.ema_decay;
    cfg.dead_fraction = base.dead_fraction;
    cfg.frame_rate_hz = base.frame_rate_hz;
    auto codec = rvq::RVQCodec::random(cfg, seed);
    auto run_cfg = tc;
    run_cfg.seed = seed;
    rvq::train_codebooks(codec, train_w, run_cfg);
    SweepRow row;
    row.frames = cfg.window_frames;
    row.tokens = t;
    row.train_loss = rvq::reconstruction_error(codec, train_w);
    row.val_loss = rvq::reconstruction_error(codec, val_w);
    rows.push_back(row);
    if (progress) progress("sweep tokens=" + std::to_string(t) + " val_loss=" + std::to_string(row.val_loss));
  }
  return rows;
}

// ---- regularizer ----

RegularizerResult regularizer_experiment(std::uint64_t seed, int epochs, int noise_values, int train_sequences) {
  ar::ARConfig cfg;
  cfg.vocab = 8;
  cfg.d_model = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.ffn_mult = 2;
  cfg.audio_dim = 4;
  cfg.audio_positions = 2;
  cfg.tokens_per_chunk = 4;
  cfg.window = 0;

  auto make = [&](int n, std::uint64_t s) {
    std::mt19937_64 rng(s);
    std::normal_distribution<double> nd;
    std::uniform_int_distribution<int> noisy(0, noise_values - 1);
    std::vector<ar::SequenceLayout> data;
    for (int i = 0; i < n; ++i) {
      std::vector<audio::AudioEmbedding> audio(2);
      std::vector<Token> toks;
      for (int c = 0; c < 2; ++c) {
        audio[static_cast<std::size_t>(c)].chunk_index = c;
        audio[static_cast<std::size_t>(c)].values.resize(cfg.audio_positions, cfg.audio_dim);
        for (Eigen::Index k = 0; k < audio[static_cast<std::size_t>(c)].values.size(); ++k) {
          audio[static_cast<std::size_t>(c)].values.data()[k] = nd(rng);
        }
        // Head 0 target: sign pattern of two audio features.
        const auto& v = audio[static_cast<std::size_t>(c)].values;
        const Token t0 = static_cast<Token>((v(0, 0) > 0 ? 1 : 0) + (v(0, 1) > 0 ? 2 : 0));
        for (int j = 0; j < cfg.tokens_per_chunk / 2; ++j) {
          toks.push_back(t0);
          toks.push_back(static_cast<Token>(4 + noisy(rng) % 4));
        }
      }
      data.push_back(ar::build_sequence(cfg, audio, toks));
    }
    return data;
  };
  const auto train_data = make(train_sequences, mix_seed(seed, 1));
  const auto eval_data = make(256, mix_seed(seed, 2));

  auto run = [&](double reg) {
    auto c = cfg;
    c.reg_weight = reg;
    auto model = ar::ARModel::random(c, mix_seed(seed, 3));
    train::TrainConfig tc;
    tc.lr_start = 1e-2;
    tc.lr_end = 1e-4;
    tc.epochs = epochs;
    tc.batch_size = 16;
    tc.seed = mix_seed(seed, 4);
    ar::train_ar(model, train_data, tc);
    return model.evaluate(eval_data).mean_abs_gap;
  };
  RegularizerResult r;
  r.gap_without = run(0.0);
  r.gap_with = run(1.0);
  return r;
}

}  // namespace teller::exp
