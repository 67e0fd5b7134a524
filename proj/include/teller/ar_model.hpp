#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "teller/audio_frontend.hpp"
#include "teller/autograd.hpp"
#include "teller/common.hpp"
#include "teller/gradcheck.hpp"
#include "teller/trainer.hpp"

namespace teller::ar {

struct TokenPair {
  Token first = 0;
  Token second = 0;
};

struct ARConfig {
  int vocab = 256;
  int d_model = 256;
  int layers = 6;
  int heads = 8;
  int ffn_mult = 4;
  int audio_dim = 64;
  int audio_positions = 10;
  int tokens_per_chunk = 32;
  // false: one token per position (single-head reference mode).
  bool dual_head = true;
  // Attention span in positions; 0 attends to the whole history.
  int window = 104;
  bool alibi = true;
  // Weight of the (L_head0 - L_head1)^2 term; 1 is the stated objective.
  double reg_weight = 1.0;

  int motion_positions() const { return dual_head ? tokens_per_chunk / 2 : tokens_per_chunk; }
  int positions_per_chunk() const { return audio_positions + motion_positions(); }
  void validate() const;
};

struct SequenceLayout {
  int chunks = 0;
  int audio_positions = 10;
  int motion_positions = 16;
  bool dual_head = true;
  Matrix audio;               // (chunks * audio_positions) x D, chronological
  std::vector<Token> tokens;  // chunks * tokens_per_chunk

  int positions() const { return chunks * (audio_positions + motion_positions); }
  std::vector<TokenPair> pairs() const;
};

SequenceLayout build_sequence(const ARConfig& cfg, std::span<const audio::AudioEmbedding> audio,
                              std::span<const Token> tokens);

struct Logits {
  Matrix head0;  // motion positions x K
  Matrix head1;  // empty in single-head mode
};

struct ArLoss {
  double head0 = 0.0;  // sums over positions
  double head1 = 0.0;
  double reg = 0.0;    // sum of squared per-position gaps
  double total = 0.0;  // head0 + head1 + reg_weight * reg
  int positions = 0;
  int tokens = 0;  // positions x heads
  double mean_abs_gap = 0.0;
  double per_token_ce() const;
};

// L_ar from explicit logits and labels (labels.size() == logits rows).
ArLoss ar_loss(const Logits& logits, std::span<const TokenPair> labels, double reg_weight = 1.0);
ArLoss single_head_loss(const Matrix& logits, std::span<const Token> labels);

struct SamplerConfig {
  int k = 15;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  void validate(int vocab) const;
};

// Top-k over logits / temperature; ties at the k boundary and in the greedy
// case go to the lowest index. `rank` receives the chosen token's logit rank.
Token sample_top_k(const RowVector& logits, const SamplerConfig& sampler, std::mt19937_64& rng,
                   int* rank = nullptr);

struct DecodeTraceEntry {
  int chunk_index = 0;
  int pair_index = 0;
  int head = 0;
  Token chosen_token = 0;
  int logit_rank = 0;
};

std::string trace_to_jsonl(std::span<const DecodeTraceEntry> trace);

class ARModel;

// Incremental decoding state: per-layer key/value rows, trimmed to the
// attention window.
class DecodeState {
 public:
  DecodeState(const ARModel& model, const SamplerConfig& sampler);

  long position() const { return position_; }
  std::size_t cache_length() const { return keys_.empty() ? 0 : keys_.front().size(); }
  int chunks_done() const { return chunks_; }
  const SamplerConfig& sampler() const { return sampler_; }

 private:
  friend class ARModel;
  SamplerConfig sampler_;
  std::mt19937_64 rng_;
  long position_ = 0;
  int chunks_ = 0;
  std::vector<std::deque<RowVector>> keys_;
  std::vector<std::deque<RowVector>> values_;
};

// Full re-forward reference decoder: keeps the whole history and recomputes
// every step from scratch on a fresh tape.
class ReferenceDecoder {
 public:
  ReferenceDecoder(const ARModel& model, const SamplerConfig& sampler);
  std::vector<Token> decode_chunk(const audio::AudioEmbedding& audio,
                                  std::vector<RowVector>* logits = nullptr);

 private:
  const ARModel& model_;
  SamplerConfig sampler_;
  std::mt19937_64 rng_;
  Matrix audio_;
  std::vector<Token> tokens_;
  int chunks_ = 0;
};

struct TapeForward {
  ad::Var hidden;   // positions x d after the final norm
  ad::Var logits0;  // motion positions x K
  ad::Var logits1;  // dual-head only
};

class ARModel {
 public:
  ARModel() = default;
  static ARModel random(const ARConfig& cfg, std::uint64_t seed, bool zero_heads = false);

  const ARConfig& config() const { return cfg_; }

  Logits forward(const SequenceLayout& layout) const;
  // Batched forward over equal-length layouts; attention stays inside each.
  TapeForward forward_on_tape(ad::Tape& tape, std::span<const SequenceLayout> batch,
                              Gradients* grads) const;
  // Loss graph for a batch; returns the batch-mean of the per-sequence L_ar
  // divided by motion positions per sequence.
  ad::Var loss_on_tape(ad::Tape& tape, std::span<const SequenceLayout> batch, Gradients* grads,
                       ArLoss* parts = nullptr) const;
  ArLoss evaluate(std::span<const SequenceLayout> data) const;

  // Feeds the chunk's audio rows, then samples and feeds every motion
  // position. `logits`, when given, receives each head's logit row in
  // sampling order.
  std::vector<Token> decode_chunk(DecodeState& state, const audio::AudioEmbedding& audio,
                                  std::vector<DecodeTraceEntry>* trace = nullptr,
                                  std::vector<RowVector>* logits = nullptr) const;

  // Audio normalisation buffers (not trained).
  void set_audio_normalizer(const RowVector& mean, const RowVector& inv_std);
  void fit_audio_normalizer(std::span<const SequenceLayout> data);
  const RowVector& audio_mean() const { return audio_mean_; }
  const RowVector& audio_inv_std() const { return audio_inv_std_; }

  ParamRefs params();
  ConstParamRefs params() const;
  const Parameter& param(const std::string& name) const;
  Parameter& param(const std::string& name);

  void save(const std::string& path) const;
  static ARModel load(const std::string& path);
  std::string encode_bytes() const;
  static ARModel decode_bytes(const std::string& bytes);

 private:
  friend class ReferenceDecoder;
  explicit ARModel(const ARConfig& cfg);
  std::vector<double> slopes() const;

  struct Input {
    int audio_row = -1;  // row of the stacked audio matrix, or -1
    Token t0 = 0, t1 = 0;
    int rel = 0;         // chunk-relative position
  };
  // Builds the residual stream input for a list of positions.
  ad::Var embed_inputs(ad::Tape& tape, const Matrix& audio, const std::vector<Input>& inputs,
                       Gradients* grads) const;
  ad::Var blocks(ad::Tape& tape, ad::Var x, int group_len, Gradients* grads) const;
  RowVector embed_row(const Input& in, const Matrix& audio) const;
  RowVector head_logits(const RowVector& hidden, int head) const;
  RowVector incremental(DecodeState& state, const RowVector& x) const;
  std::vector<Input> layout_inputs(const SequenceLayout& l, int audio_offset) const;

  ARConfig cfg_;
  std::vector<Parameter> params_;
  RowVector audio_mean_;
  RowVector audio_inv_std_;
};

train::FitResult train_ar(ARModel& model, std::span<const SequenceLayout> data,
                          const train::TrainConfig& cfg, const train::FitHooks& hooks = {});

GradCheckReport ar_gradcheck(ARModel& model, std::span<const SequenceLayout> data, double step = 1e-5);

}  // namespace teller::ar
