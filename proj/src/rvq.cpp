#include "teller/rvq.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "teller/binary_io.hpp"

namespace teller::rvq {

using motion::MotionWindow;

namespace {

constexpr std::uint16_t kCodecVersion = 1;

Matrix random_normal(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

// Nearest entry by direct squared distance; first minimum wins.
int nearest(const Matrix& book, const RowVector& r) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < book.rows(); ++k) {
    const double d = (book.row(k) - r).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

// Quantizes every row of `rows` through all stages in place of the residual.
// Returns the summed reconstruction and fills per-stage bookkeeping.
Matrix quantize_rows(const std::vector<Parameter>& books, const Matrix& rows,
                     std::vector<std::vector<int>>* assignments, std::vector<Matrix>* stage_inputs,
                     Matrix* residual_norms) {
  Matrix residual = rows;
  Matrix zhat = Matrix::Zero(rows.rows(), rows.cols());
  const auto stages = static_cast<int>(books.size());
  if (assignments) assignments->assign(static_cast<std::size_t>(stages), {});
  if (stage_inputs) stage_inputs->clear();
  if (residual_norms) residual_norms->resize(rows.rows(), stages);
  for (int s = 0; s < stages; ++s) {
    const Matrix& book = books[static_cast<std::size_t>(s)].value;
    if (stage_inputs) stage_inputs->push_back(residual);
    std::vector<int> ids(static_cast<std::size_t>(rows.rows()));
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
      const int k = nearest(book, residual.row(i));
      ids[static_cast<std::size_t>(i)] = k;
      zhat.row(i) += book.row(k);
      residual.row(i) -= book.row(k);
      if (residual_norms) (*residual_norms)(i, s) = residual.row(i).norm();
    }
    if (assignments) (*assignments)[static_cast<std::size_t>(s)] = std::move(ids);
  }
  return zhat;
}

Matrix as_rows(const Matrix& z, int latent_dim) {
  return Eigen::Map<const Matrix>(z.data(), z.size() / latent_dim, latent_dim);
}

}  // namespace

void RVQConfig::validate() const {
  if (window_frames <= 0 || slots <= 0 || latent_dim <= 0 || codebook_size <= 0 || hidden_mult <= 0) {
    throw ValidationError("rvq: dimensions must be positive");
  }
  if (residual_stages < 0) throw ValidationError("rvq: residual_stages must be non-negative");
  if (codebook_size > 65536) throw ValidationError("rvq: codebook_size must fit in u16 tokens");
  if (!(commitment_weight >= 0.0)) throw ValidationError("rvq: commitment_weight must be non-negative");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ValidationError("rvq: ema_decay must be in [0, 1)");
  if (!(frame_rate_hz > 0.0)) throw ValidationError("rvq: frame rate must be positive");
}

RVQConfig RVQConfig::for_tokens(int tokens_per_window, int slots) {
  if (slots <= 0 || tokens_per_window % slots != 0) {
    throw ValidationError("rvq: tokens_per_window must be a multiple of slots");
  }
  RVQConfig c;
  c.slots = slots;
  c.residual_stages = tokens_per_window / slots;
  return c;
}

RVQCodec::RVQCodec(const RVQConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int in = cfg_.input_dim(), hid = cfg_.hidden_dim(), code = cfg_.code_dim();
  enc_w1_ = {"enc_w1", Matrix::Zero(in, hid)};
  enc_b1_ = {"enc_b1", Matrix::Zero(1, hid)};
  enc_w2_ = {"enc_w2", Matrix::Zero(hid, code)};
  enc_b2_ = {"enc_b2", Matrix::Zero(1, code)};
  dec_w1_ = {"dec_w1", Matrix::Zero(code, hid)};
  dec_b1_ = {"dec_b1", Matrix::Zero(1, hid)};
  dec_w2_ = {"dec_w2", Matrix::Zero(hid, in)};
  dec_b2_ = {"dec_b2", Matrix::Zero(1, in)};
  for (int s = 0; s < cfg_.residual_stages; ++s) {
    codebooks_.push_back({"codebook_" + std::to_string(s), Matrix::Zero(cfg_.codebook_size, cfg_.latent_dim)});
  }
}

RVQCodec RVQCodec::zeros(const RVQConfig& cfg) { return RVQCodec(cfg); }

RVQCodec RVQCodec::random(const RVQConfig& cfg, std::uint64_t seed) {
  RVQCodec c(cfg);
  std::mt19937_64 rng(mix_seed(seed, 1));
  const double gain = cfg.activation == Activation::kGelu ? 2.0 : 1.0;
  auto init = [&](Parameter& p) {
    p.value = random_normal(p.value.rows(), p.value.cols(), std::sqrt(gain / p.value.rows()), rng);
  };
  init(c.enc_w1_);
  c.enc_w2_.value = random_normal(c.enc_w2_.value.rows(), c.enc_w2_.value.cols(),
                                  std::sqrt(1.0 / c.enc_w2_.value.rows()), rng);
  init(c.dec_w1_);
  c.dec_w2_.value = random_normal(c.dec_w2_.value.rows(), c.dec_w2_.value.cols(),
                                  std::sqrt(1.0 / c.dec_w2_.value.rows()), rng);
  for (auto& b : c.codebooks_) b.value = random_normal(b.value.rows(), b.value.cols(), 0.1, rng);
  return c;
}

RVQCodec RVQCodec::identity_stub(const RVQConfig& cfg) {
  RVQConfig c = cfg;
  c.activation = Activation::kIdentity;
  if (c.code_dim() < c.input_dim()) {
    throw ValidationError("rvq: identity stub needs slots*latent_dim >= window size");
  }
  RVQCodec codec(c);
  const int in = c.input_dim(), code = c.code_dim();
  for (int i = 0; i < in; ++i) {
    codec.enc_w1_.value(i, i) = 1.0;
    codec.enc_w2_.value(i, i) = 1.0;
    codec.dec_w1_.value(i, i) = 1.0;
    codec.dec_w2_.value(i, i) = 1.0;
  }
  (void)code;
  return codec;
}

Matrix RVQCodec::act(const Matrix& x) const {
  if (cfg_.activation == Activation::kIdentity) return x;
  return x.unaryExpr([](double v) { return ad::gelu_value(v); });
}

ad::Var RVQCodec::act(ad::Var x) const {
  return cfg_.activation == Activation::kIdentity ? x : ad::gelu(x);
}

Matrix RVQCodec::encode_batch(const Matrix& x) const {
  if (x.cols() != cfg_.input_dim()) throw ValidationError("rvq encode: wrong input width");
  Matrix h = x * enc_w1_.value;
  h.rowwise() += enc_b1_.value.row(0);
  Matrix z = act(h) * enc_w2_.value;
  z.rowwise() += enc_b2_.value.row(0);
  return z;
}

Matrix RVQCodec::decode_batch(const Matrix& z) const {
  if (z.cols() != cfg_.code_dim()) throw ValidationError("rvq decode: wrong latent width");
  Matrix h = z * dec_w1_.value;
  h.rowwise() += dec_b1_.value.row(0);
  Matrix x = act(h) * dec_w2_.value;
  x.rowwise() += dec_b2_.value.row(0);
  return x;
}

Matrix RVQCodec::encode(const MotionWindow& w) const {
  motion::validate_window(w, cfg_.window_frames);
  const auto flat = motion::flatten_window(w);
  const Matrix x = Eigen::Map<const Matrix>(flat.data(), 1, static_cast<Eigen::Index>(flat.size()));
  return as_rows(encode_batch(x), cfg_.latent_dim);
}

QuantizeResult RVQCodec::quantize(const Matrix& z) const {
  if (z.rows() != cfg_.slots || z.cols() != cfg_.latent_dim) {
    throw ValidationError("rvq quantize: latent must be slots x latent_dim");
  }
  if (!all_finite(z)) throw ValidationError("rvq quantize: latent is not finite");
  QuantizeResult r;
  if (cfg_.residual_stages == 0) {
    r.z_hat = z;
    r.residual_norms.resize(cfg_.slots, 0);
    return r;
  }
  std::vector<std::vector<int>> ids;
  r.z_hat = quantize_rows(codebooks_, z, &ids, nullptr, &r.residual_norms);
  for (int slot = 0; slot < cfg_.slots; ++slot) {
    for (int s = 0; s < cfg_.residual_stages; ++s) {
      r.tokens.push_back(ids[static_cast<std::size_t>(s)][static_cast<std::size_t>(slot)]);
    }
  }
  return r;
}

Matrix RVQCodec::dequantize(std::span<const Token> tokens) const {
  if (static_cast<int>(tokens.size()) != cfg_.tokens_per_window()) {
    throw ValidationError("rvq dequantize: expected " + std::to_string(cfg_.tokens_per_window()) + " tokens");
  }
  Matrix z = Matrix::Zero(cfg_.slots, cfg_.latent_dim);
  std::size_t i = 0;
  for (int slot = 0; slot < cfg_.slots; ++slot) {
    for (int s = 0; s < cfg_.residual_stages; ++s, ++i) {
      const Token t = tokens[i];
      if (t < 0 || t >= cfg_.codebook_size) {
        throw ValidationError("rvq dequantize: token " + std::to_string(t) + " out of range");
      }
      z.row(slot) += codebooks_[static_cast<std::size_t>(s)].value.row(t);
    }
  }
  return z;
}

MotionWindow RVQCodec::decode(const Matrix& z_hat) const {
  if (z_hat.size() != cfg_.code_dim()) throw ValidationError("rvq decode: wrong latent size");
  const Matrix z = Eigen::Map<const Matrix>(z_hat.data(), 1, z_hat.size());
  const Matrix x = decode_batch(z);
  return motion::unflatten_window(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                                  cfg_.frame_rate_hz);
}

VqLoss RVQCodec::vq_loss(const MotionWindow& w) const {
  motion::validate_window(w, cfg_.window_frames);
  const auto flat = motion::flatten_window(w);
  const Matrix x = Eigen::Map<const Matrix>(flat.data(), 1, static_cast<Eigen::Index>(flat.size()));
  ad::Tape tape;
  const TapeLoss t = loss_on_tape(tape, x, nullptr);
  return {tape.value(t.recon)(0, 0), tape.value(t.commit)(0, 0), tape.value(t.total)(0, 0)};
}

TapeLoss RVQCodec::loss_on_tape(ad::Tape& tape, const Matrix& x, Gradients* grads,
                                const Matrix* fixed_shift, const Matrix* fixed_target) const {
  if (x.cols() != cfg_.input_dim() || x.rows() == 0) throw ValidationError("rvq loss: bad batch shape");
  const Eigen::Index batch = x.rows();
  TapeLoss out;
  auto p = [&](const Parameter& prm) { return tape.param(prm, grads); };

  ad::Var xs = tape.constant(x);
  ad::Var z = ad::linear(act(ad::linear(xs, p(enc_w1_), p(enc_b1_))), p(enc_w2_), p(enc_b2_));
  out.z = tape.value(z);

  ad::Var zhat_sg;
  if (cfg_.residual_stages == 0) {
    zhat_sg = ad::stop_gradient(z);
  } else {
    const Matrix rows = as_rows(out.z, cfg_.latent_dim);
    quantize_rows(codebooks_, rows, &out.assignments, &out.stage_inputs, nullptr);
    ad::Var acc = ad::gather_rows(p(codebooks_[0]), out.assignments[0]);
    for (int s = 1; s < cfg_.residual_stages; ++s) {
      acc = ad::add(acc, ad::gather_rows(p(codebooks_[static_cast<std::size_t>(s)]),
                                         out.assignments[static_cast<std::size_t>(s)]));
    }
    zhat_sg = ad::reshape(ad::stop_gradient(acc), batch, cfg_.code_dim());
  }
  out.z_hat = tape.value(zhat_sg);

  ad::Var shift = fixed_shift ? tape.constant(*fixed_shift) : ad::stop_gradient(ad::sub(zhat_sg, z));
  ad::Var z_st = ad::add(z, shift);
  ad::Var target = fixed_target ? tape.constant(*fixed_target) : zhat_sg;
  ad::Var xhat = ad::linear(act(ad::linear(z_st, p(dec_w1_), p(dec_b1_))), p(dec_w2_), p(dec_b2_));

  const double inv = 1.0 / static_cast<double>(batch);
  out.recon = ad::scale(ad::sum_squares(ad::sub(xhat, xs)), inv);
  out.commit = ad::scale(ad::sum_squares(ad::sub(z, target)), inv);
  out.total = ad::add(out.recon, ad::scale(out.commit, cfg_.commitment_weight));
  return out;
}

TokenSequence RVQCodec::tokenize(std::span<const MotionWindow> windows) const {
  TokenSequence seq;
  for (const auto& w : windows) {
    const auto q = quantize(encode(w));
    seq.tokens.insert(seq.tokens.end(), q.tokens.begin(), q.tokens.end());
    ++seq.window_count;
  }
  return seq;
}

std::vector<MotionWindow> RVQCodec::detokenize(const TokenSequence& seq) const {
  const auto per = static_cast<std::size_t>(cfg_.tokens_per_window());
  if (seq.tokens.size() != per * static_cast<std::size_t>(seq.window_count)) {
    throw ValidationError("rvq detokenize: token count does not match window count");
  }
  std::vector<MotionWindow> out;
  for (int w = 0; w < seq.window_count; ++w) {
    out.push_back(decode(dequantize(std::span<const Token>(seq.tokens).subspan(per * static_cast<std::size_t>(w), per))));
  }
  return out;
}

ParamRefs RVQCodec::network_params() {
  return {&enc_w1_, &enc_b1_, &enc_w2_, &enc_b2_, &dec_w1_, &dec_b1_, &dec_w2_, &dec_b2_};
}

ParamRefs RVQCodec::codebook_params() {
  ParamRefs r;
  for (auto& b : codebooks_) r.push_back(&b);
  return r;
}

ParamRefs RVQCodec::all_params() {
  ParamRefs r = network_params();
  for (auto* b : codebook_params()) r.push_back(b);
  return r;
}

ConstParamRefs RVQCodec::all_params() const {
  return const_refs(const_cast<RVQCodec*>(this)->all_params());
}

// ---------------------------------------------------------------------------

std::string RVQCodec::encode_bytes() const {
  std::ostringstream os(std::ios::binary);
  io::Writer w(os);
  w.magic("TRVQ");
  w.u16(kCodecVersion);
  w.u16(static_cast<std::uint16_t>(cfg_.activation));
  w.u32(static_cast<std::uint32_t>(cfg_.window_frames));
  w.u32(static_cast<std::uint32_t>(cfg_.slots));
  w.u32(static_cast<std::uint32_t>(cfg_.residual_stages));
  w.u32(static_cast<std::uint32_t>(cfg_.latent_dim));
  w.u32(static_cast<std::uint32_t>(cfg_.codebook_size));
  w.u32(static_cast<std::uint32_t>(cfg_.hidden_mult));
  w.f32(static_cast<float>(cfg_.commitment_weight));
  w.f32(static_cast<float>(cfg_.ema_decay));
  w.f32(static_cast<float>(cfg_.dead_fraction));
  w.f32(static_cast<float>(cfg_.frame_rate_hz));
  for (const Parameter* p : all_params()) w.f32_block(p->value);
  return os.str();
}

RVQCodec RVQCodec::decode_bytes(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  io::Reader r(is);
  r.expect_magic("TRVQ");
  if (r.u16() != kCodecVersion) throw FormatError("TRVQ: unsupported version");
  RVQConfig c;
  const std::uint16_t act = r.u16();
  if (act > 1) throw FormatError("TRVQ: unknown activation");
  c.activation = static_cast<Activation>(act);
  c.window_frames = static_cast<int>(r.u32());
  c.slots = static_cast<int>(r.u32());
  c.residual_stages = static_cast<int>(r.u32());
  c.latent_dim = static_cast<int>(r.u32());
  c.codebook_size = static_cast<int>(r.u32());
  c.hidden_mult = static_cast<int>(r.u32());
  c.commitment_weight = r.f32();
  c.ema_decay = r.f32();
  c.dead_fraction = r.f32();
  c.frame_rate_hz = r.f32();
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("TRVQ: ") + e.what());
  }
  RVQCodec codec(c);
  for (Parameter* p : codec.all_params()) p->value = r.f32_block(p->value.rows(), p->value.cols());
  if (!r.at_end()) throw FormatError("TRVQ: trailing bytes");
  return codec;
}

void RVQCodec::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  const std::string b = encode_bytes();
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

RVQCodec RVQCodec::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_bytes(ss.str());
}

void write_tokens(const std::string& path, std::span<const Token> tokens) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  io::Writer w(out);
  for (Token t : tokens) {
    if (t < 0 || t > 65535) throw ValidationError("token does not fit in u16");
    w.u16(static_cast<std::uint16_t>(t));
  }
}

std::vector<Token> read_tokens(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  io::Reader r(in);
  std::vector<Token> out;
  while (!r.at_end()) out.push_back(r.u16());
  return out;
}

// ---------------------------------------------------------------------------

Matrix windows_to_matrix(std::span<const MotionWindow> windows) {
  if (windows.empty()) return Matrix();
  const auto width = static_cast<Eigen::Index>(windows.front().frames.size()) * motion::kLatentSize;
  Matrix x(static_cast<Eigen::Index>(windows.size()), width);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto flat = motion::flatten_window(windows[i]);
    if (static_cast<Eigen::Index>(flat.size()) != width) throw ValidationError("windows differ in length");
    x.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const RowVector>(flat.data(), width);
  }
  return x;
}

double reconstruction_error(const RVQCodec& codec, std::span<const MotionWindow> windows) {
  if (windows.empty()) throw ValidationError("reconstruction_error: no windows");
  const auto& cfg = codec.config();
  const Matrix x = windows_to_matrix(windows);
  const Matrix z = codec.encode_batch(x);
  Matrix zhat = z;
  if (cfg.residual_stages > 0) {
    std::vector<Parameter> books;
    for (int s = 0; s < cfg.residual_stages; ++s) books.push_back(codec.codebook(s));
    const Matrix q = quantize_rows(books, as_rows(z, cfg.latent_dim), nullptr, nullptr, nullptr);
    zhat = Eigen::Map<const Matrix>(q.data(), z.rows(), z.cols());
  }
  return (codec.decode_batch(zhat) - x).squaredNorm() / static_cast<double>(x.rows());
}

namespace {

struct EmaBook {
  RowVector count;
  Matrix sum;
};

}  // namespace

train::FitResult train_codebooks(RVQCodec& codec, std::span<const MotionWindow> windows,
                                 const train::TrainConfig& cfg, const RvqTrainOptions& opts) {
  if (windows.empty()) throw ValidationError("train_codebooks: dataset is empty");
  const RVQConfig& rc = codec.config();
  for (const auto& w : windows) motion::validate_window(w, rc.window_frames);
  const Matrix x = windows_to_matrix(windows);
  const int stages = rc.residual_stages;
  const int k = rc.codebook_size;
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x5eed));

  if (opts.data_init && stages > 0) {
    // Seed each stage with residuals of randomly drawn training rows.
    const Eigen::Index take = std::min<Eigen::Index>(x.rows(), 4096);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
    std::shuffle(order.begin(), order.end(), rng);
    Matrix sample(take, x.cols());
    for (Eigen::Index i = 0; i < take; ++i) sample.row(i) = x.row(order[static_cast<std::size_t>(i)]);
    Matrix residual = as_rows(codec.encode_batch(sample), rc.latent_dim);
    std::uniform_int_distribution<Eigen::Index> pick(0, residual.rows() - 1);
    for (int s = 0; s < stages; ++s) {
      Matrix& book = codec.codebook(s).value;
      for (int e = 0; e < k; ++e) book.row(e) = residual.row(pick(rng));
      for (Eigen::Index i = 0; i < residual.rows(); ++i) {
        const RowVector r = residual.row(i);
        residual.row(i) -= book.row(nearest(book, r));
      }
    }
  }

  std::vector<EmaBook> ema(static_cast<std::size_t>(stages));
  const double uniform = static_cast<double>(std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), windows.size())) *
                         rc.slots / k;
  for (int s = 0; s < stages; ++s) {
    ema[static_cast<std::size_t>(s)].count = RowVector::Constant(k, uniform);
    ema[static_cast<std::size_t>(s)].sum = codec.codebook(s).value * uniform;
  }

  TapeLoss last;
  auto loss = [&](std::span<const std::size_t> batch, Gradients& grads) {
    Matrix xb(static_cast<Eigen::Index>(batch.size()), x.cols());
    for (std::size_t i = 0; i < batch.size(); ++i) xb.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(batch[i]));
    ad::Tape tape;
    last = codec.loss_on_tape(tape, xb, &grads);
    tape.backward(last.total);
    return tape.value(last.total)(0, 0);
  };

  auto after_step = [&](long step, std::span<const std::size_t> batch) {
    const double d = rc.ema_decay;
    for (int s = 0; s < stages; ++s) {
      auto& e = ema[static_cast<std::size_t>(s)];
      const auto& ids = last.assignments[static_cast<std::size_t>(s)];
      const Matrix& inputs = last.stage_inputs[static_cast<std::size_t>(s)];
      RowVector n = RowVector::Zero(k);
      Matrix sums = Matrix::Zero(k, rc.latent_dim);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        n(ids[i]) += 1.0;
        sums.row(ids[i]) += inputs.row(static_cast<Eigen::Index>(i));
      }
      e.count = d * e.count + (1.0 - d) * n;
      e.sum = d * e.sum + (1.0 - d) * sums;
      const double rows = static_cast<double>(ids.size());
      const double share = rows / k;
      const double total = e.count.sum();
      constexpr double kEps = 1e-5;
      Matrix& book = codec.codebook(s).value;
      std::uniform_int_distribution<Eigen::Index> pick(0, inputs.rows() - 1);
      for (int j = 0; j < k; ++j) {
        if (e.count(j) < rc.dead_fraction * share) {
          book.row(j) = inputs.row(pick(rng));
          e.count(j) = share;
          e.sum.row(j) = book.row(j) * share;
        } else {
          const double smoothed = (e.count(j) + kEps) / (total + k * kEps) * total;
          book.row(j) = e.sum.row(j) / smoothed;
        }
      }
    }
    if (opts.hooks.after_step) opts.hooks.after_step(step, batch);
  };

  train::FitHooks hooks;
  hooks.after_step = after_step;
  hooks.after_epoch = opts.hooks.after_epoch;
  return train::fit(codec.all_params(), windows.size(), loss, cfg, hooks);
}

GradCheckReport vq_gradcheck(RVQCodec& codec, std::span<const MotionWindow> windows, double step) {
  const Matrix x = windows_to_matrix(windows);
  ParamRefs params = codec.network_params();
  Gradients grads(const_refs(params));
  Matrix shift, target;
  {
    ad::Tape tape;
    const TapeLoss t = codec.loss_on_tape(tape, x, &grads);
    tape.backward(t.total);
    shift = t.z_hat - t.z;
    target = t.z_hat;
  }
  auto surrogate = [&]() {
    ad::Tape tape;
    const TapeLoss t = codec.loss_on_tape(tape, x, nullptr, &shift, &target);
    return tape.value(t.total)(0, 0);
  };
  return check_gradients(params, surrogate, grads, step);
}

}  // namespace teller::rvq
