#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "teller/autograd.hpp"
#include "teller/common.hpp"
#include "teller/gradcheck.hpp"
#include "teller/motion_latent.hpp"
#include "teller/trainer.hpp"

namespace teller::rvq {

enum class Activation : std::uint16_t { kGelu = 0, kIdentity = 1 };

struct RVQConfig {
  int window_frames = 4;
  int slots = 8;
  // Stages per slot; 0 bypasses quantization (z_hat = z, no tokens).
  int residual_stages = 4;
  int latent_dim = 64;
  int codebook_size = 256;
  int hidden_mult = 4;
  Activation activation = Activation::kGelu;
  double commitment_weight = 1.0;
  double ema_decay = 0.99;
  // Entries whose EMA usage drops under this fraction of uniform are re-seeded.
  double dead_fraction = 0.01;
  double frame_rate_hz = 20.0;

  int tokens_per_window() const { return slots * residual_stages; }
  int input_dim() const { return window_frames * motion::kLatentSize; }
  int code_dim() const { return slots * latent_dim; }
  int hidden_dim() const { return hidden_mult * code_dim(); }
  void validate() const;

  // slots stays fixed; residual_stages = tokens / slots.
  static RVQConfig for_tokens(int tokens_per_window, int slots = 8);
};

struct TokenSequence {
  std::vector<Token> tokens;
  int window_count = 0;
};

struct QuantizeResult {
  std::vector<Token> tokens;  // slot-major: slot 0 stages 0..S-1, slot 1, ...
  Matrix z_hat;               // slots x latent_dim
  Matrix residual_norms;      // slots x S; L2 norm left after each stage
};

struct VqLoss {
  double recon = 0.0;
  double commit = 0.0;
  double total = 0.0;
};

// Tape handles for one batched forward pass.
struct TapeLoss {
  ad::Var recon;   // mean over batch of ||x - x_hat||^2
  ad::Var commit;  // mean over batch of ||z - sg[z_hat]||^2
  ad::Var total;
  Matrix z;        // B x code_dim (encoder output)
  Matrix z_hat;    // B x code_dim
  // Per stage, the chosen entry for each of the B*slots rows and the residual
  // that was quantized.
  std::vector<std::vector<int>> assignments;
  std::vector<Matrix> stage_inputs;
};

class RVQCodec {
 public:
  RVQCodec() = default;

  // He-style random encoder/decoder, small random codebooks.
  static RVQCodec random(const RVQConfig& cfg, std::uint64_t seed);
  static RVQCodec zeros(const RVQConfig& cfg);
  // Identity activation with [I 0] / [I; 0] weights so decode(encode(w)) = w.
  // Needs code_dim() >= input_dim().
  static RVQCodec identity_stub(const RVQConfig& cfg);

  const RVQConfig& config() const { return cfg_; }

  Matrix encode(const motion::MotionWindow& w) const;  // slots x latent_dim
  Matrix encode_batch(const Matrix& x) const;          // B x input_dim -> B x code_dim
  QuantizeResult quantize(const Matrix& z) const;
  Matrix dequantize(std::span<const Token> tokens) const;
  motion::MotionWindow decode(const Matrix& z_hat) const;
  Matrix decode_batch(const Matrix& z) const;  // B x code_dim -> B x input_dim
  VqLoss vq_loss(const motion::MotionWindow& w) const;

  // Batched straight-through loss. When `fixed_shift` is given it replaces
  // sg[z_hat - z] and `fixed_target` replaces sg[z_hat]; used by gradient
  // checks where the quantizer output is held constant.
  TapeLoss loss_on_tape(ad::Tape& tape, const Matrix& x, Gradients* grads,
                        const Matrix* fixed_shift = nullptr,
                        const Matrix* fixed_target = nullptr) const;

  TokenSequence tokenize(std::span<const motion::MotionWindow> windows) const;
  std::vector<motion::MotionWindow> detokenize(const TokenSequence& seq) const;

  ParamRefs network_params();
  ParamRefs codebook_params();
  ParamRefs all_params();
  ConstParamRefs all_params() const;
  Parameter& codebook(int stage) { return codebooks_[static_cast<std::size_t>(stage)]; }
  const Parameter& codebook(int stage) const { return codebooks_[static_cast<std::size_t>(stage)]; }

  void save(const std::string& path) const;
  static RVQCodec load(const std::string& path);
  std::string encode_bytes() const;
  static RVQCodec decode_bytes(const std::string& bytes);

 private:
  explicit RVQCodec(const RVQConfig& cfg);
  Matrix act(const Matrix& x) const;
  ad::Var act(ad::Var x) const;

  RVQConfig cfg_;
  Parameter enc_w1_, enc_b1_, enc_w2_, enc_b2_;
  Parameter dec_w1_, dec_b1_, dec_w2_, dec_b2_;
  std::vector<Parameter> codebooks_;
};

// Rows of `x` as flattened windows.
Matrix windows_to_matrix(std::span<const motion::MotionWindow> windows);

// Mean over windows of ||x - decode(dequantize(quantize(encode(x))))||^2.
double reconstruction_error(const RVQCodec& codec, std::span<const motion::MotionWindow> windows);

struct RvqTrainOptions {
  // Seed codebooks from encoded training residuals before the first step.
  bool data_init = true;
  train::FitHooks hooks;
};

// Straight-through training of encoder/decoder with EMA codebooks.
train::FitResult train_codebooks(RVQCodec& codec, std::span<const motion::MotionWindow> windows,
                                 const train::TrainConfig& cfg, const RvqTrainOptions& opts = {});

// Finite-difference check of the straight-through gradient of L_vq for every
// encoder and decoder parameter, with the quantizer output frozen.
GradCheckReport vq_gradcheck(RVQCodec& codec, std::span<const motion::MotionWindow> windows,
                             double step = 1e-5);

// Raw u16 little-endian token streams.
void write_tokens(const std::string& path, std::span<const Token> tokens);
std::vector<Token> read_tokens(const std::string& path);

}  // namespace teller::rvq
