#include "teller/rvq.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

namespace teller::rvq {
namespace {

using motion::MotionLatent;
using motion::MotionWindow;

MotionWindow random_window(std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  MotionWindow w;
  for (int f = 0; f < 4; ++f) {
    std::array<double, motion::kLatentSize> v{};
    for (auto& x : v) x = nd(rng);
    w.frames.push_back(MotionLatent::from_flat(v));
  }
  return w;
}

// Windows driven by a few smooth factors, so a small codec can fit them.
std::vector<MotionWindow> factor_windows(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix mix(3, motion::kLatentSize);
  for (Eigen::Index i = 0; i < mix.size(); ++i) mix.data()[i] = nd(rng) * 0.3;
  std::vector<MotionWindow> out;
  for (int i = 0; i < n; ++i) {
    MotionWindow w;
    const double a = nd(rng), b = nd(rng), c = nd(rng);
    for (int f = 0; f < 4; ++f) {
      const RowVector row = (a + 0.1 * f * b) * mix.row(0) + b * mix.row(1) + c * std::cos(0.5 * f) * mix.row(2);
      w.frames.push_back(MotionLatent::from_flat(std::span<const double>(row.data(), motion::kLatentSize)));
    }
    out.push_back(w);
  }
  return out;
}

RVQConfig small_config(int k, int stages, int dim, int slots = 2) {
  RVQConfig c;
  c.slots = slots;
  c.residual_stages = stages;
  c.latent_dim = dim;
  c.codebook_size = k;
  c.hidden_mult = 2;
  return c;
}

// Independent brute-force residual search: every entry of every stage.
std::vector<Token> brute_force_tokens(const RVQCodec& codec, const Matrix& z) {
  const auto& cfg = codec.config();
  std::vector<Token> tokens;
  for (int slot = 0; slot < cfg.slots; ++slot) {
    std::vector<double> r(z.row(slot).data(), z.row(slot).data() + cfg.latent_dim);
    for (int s = 0; s < cfg.residual_stages; ++s) {
      const Matrix& book = codec.codebook(s).value;
      int best = -1;
      double best_d = 0.0;
      for (int k = 0; k < cfg.codebook_size; ++k) {
        double d = 0.0;
        for (int j = 0; j < cfg.latent_dim; ++j) d += (r[j] - book(k, j)) * (r[j] - book(k, j));
        if (best < 0 || d < best_d) {
          best = k;
          best_d = d;
        }
      }
      for (int j = 0; j < cfg.latent_dim; ++j) r[j] -= book(best, j);
      tokens.push_back(best);
    }
  }
  return tokens;
}

TEST(RvqEncodeTest, ZeroWindowZeroCodecGivesZeroLatent) {
  const auto codec = RVQCodec::zeros(RVQConfig{});
  MotionWindow w;
  w.frames.assign(4, MotionLatent{});
  const Matrix z = codec.encode(w);
  EXPECT_EQ(z.rows(), 8);
  EXPECT_EQ(z.cols(), 64);
  EXPECT_TRUE((z.array() == 0.0).all());
}

TEST(RvqEncodeTest, ShapeDeterminismAndLengthCheck) {
  std::mt19937_64 rng(1);
  const auto codec = RVQCodec::random(small_config(16, 2, 8, 4), 3);
  const auto w = random_window(rng);
  const Matrix a = codec.encode(w);
  const Matrix b = codec.encode(w);
  EXPECT_EQ(a.rows(), 4);
  EXPECT_EQ(a.cols(), 8);
  EXPECT_TRUE(a == b);
  EXPECT_TRUE(all_finite(a));
  MotionWindow short_w = w;
  short_w.frames.pop_back();
  EXPECT_THROW(codec.encode(short_w), ValidationError);
}

TEST(RvqQuantizeTest, ExactCodebookMatch) {
  auto codec = RVQCodec::random(small_config(16, 1, 4, 1), 4);
  const Matrix z = codec.codebook(0).value.row(7);
  const auto q = codec.quantize(z);
  ASSERT_EQ(q.tokens.size(), 1u);
  EXPECT_EQ(q.tokens[0], 7);
  EXPECT_TRUE(q.z_hat == z);
  EXPECT_EQ(q.residual_norms(0, 0), 0.0);
}

TEST(RvqQuantizeTest, MatchesBruteForceSearch) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  auto codec = RVQCodec::random(small_config(8, 2, 4, 3), 6);
  for (int trial = 0; trial < 300; ++trial) {
    Matrix z(3, 4);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = nd(rng) * 0.2;
    const auto q = codec.quantize(z);
    EXPECT_EQ(q.tokens, brute_force_tokens(codec, z));
  }
}

TEST(RvqQuantizeTest, TiesGoToLowestIndex) {
  auto codec = RVQCodec::zeros(small_config(4, 1, 2, 1));
  codec.codebook(0).value << 1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 1.0, 0.0;
  const Matrix z = Matrix::Zero(1, 2);
  EXPECT_EQ(codec.quantize(z).tokens[0], 0);
  Matrix z2(1, 2);
  z2 << 1.0, 0.0;
  EXPECT_EQ(codec.quantize(z2).tokens[0], 0);
}

TEST(RvqQuantizeTest, DefaultConfigEmitsThirtyTwoTokens) {
  std::mt19937_64 rng(7);
  const auto codec = RVQCodec::random(RVQConfig{}, 8);
  const auto q = codec.quantize(codec.encode(random_window(rng)));
  EXPECT_EQ(q.tokens.size(), 32u);
  EXPECT_EQ(codec.config().tokens_per_window(), 32);
  for (Token t : q.tokens) {
    EXPECT_GE(t, 0);
    EXPECT_LT(t, 256);
  }
}

TEST(RvqQuantizeTest, ArgminOptimalAndResidualNormsExact) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  auto codec = RVQCodec::random(small_config(8, 3, 4, 2), 10);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix z(2, 4);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = nd(rng) * 0.3;
    const auto q = codec.quantize(z);
    for (int slot = 0; slot < 2; ++slot) {
      RowVector r = z.row(slot);
      for (int s = 0; s < 3; ++s) {
        const Matrix& book = codec.codebook(s).value;
        const Token chosen = q.tokens[slot * 3 + s];
        const double dc = (r - book.row(chosen)).squaredNorm();
        for (int k = 0; k < 8; ++k) EXPECT_LE(dc, (r - book.row(k)).squaredNorm());
        r -= book.row(chosen);
        EXPECT_DOUBLE_EQ(q.residual_norms(slot, s), r.norm());
      }
    }
  }
}

TEST(RvqQuantizeTest, IdempotentOnSumsOfEntries) {
  // Stage entries with disjoint magnitudes make every sum uniquely decodable.
  auto codec = RVQCodec::zeros(small_config(4, 2, 2, 2));
  codec.codebook(0).value << 10, 0, 0, 10, -10, 0, 0, -10;
  codec.codebook(1).value << 1, 0, 0, 1, -1, 0, 0, -1;
  for (Token a = 0; a < 4; ++a) {
    for (Token b = 0; b < 4; ++b) {
      const std::vector<Token> toks{a, b, b, a};
      const auto q = codec.quantize(codec.dequantize(toks));
      EXPECT_EQ(q.tokens, toks);
    }
  }
}

TEST(RvqDequantizeTest, ZeroCodebookConsistencyAndRange) {
  const auto zero = RVQCodec::zeros(RVQConfig{});
  const std::vector<Token> toks(32, 5);
  EXPECT_TRUE((zero.dequantize(toks).array() == 0.0).all());
  EXPECT_EQ(zero.dequantize(toks).rows(), 8);

  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd;
  auto codec = RVQCodec::random(small_config(8, 2, 4, 3), 12);
  Matrix z(3, 4);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = nd(rng);
  const auto q = codec.quantize(z);
  EXPECT_TRUE(codec.dequantize(q.tokens) == q.z_hat);

  std::vector<Token> bad = q.tokens;
  bad[0] = 8;
  EXPECT_THROW(codec.dequantize(bad), ValidationError);
  bad.pop_back();
  EXPECT_THROW(codec.dequantize(bad), ValidationError);
}

TEST(RvqDecodeTest, ZeroAndIdentityStub) {
  const auto zero = RVQCodec::zeros(RVQConfig{});
  const auto w0 = zero.decode(Matrix::Zero(8, 64));
  ASSERT_EQ(w0.frames.size(), 4u);
  for (const auto& f : w0.frames) EXPECT_EQ(f, MotionLatent{});

  RVQConfig cfg;
  cfg.slots = 5;
  cfg.latent_dim = 60;
  cfg.residual_stages = 0;
  cfg.hidden_mult = 1;
  const auto stub = RVQCodec::identity_stub(cfg);
  std::mt19937_64 rng(13);
  const auto w = random_window(rng);
  const auto back = stub.decode(stub.quantize(stub.encode(w)).z_hat);
  for (int f = 0; f < 4; ++f) {
    for (int i = 0; i < motion::kLatentSize; ++i) EXPECT_NEAR(back.frames[f][i], w.frames[f][i], 1e-6);
  }
  const auto l = stub.vq_loss(w);
  EXPECT_EQ(l.recon, 0.0);
  EXPECT_EQ(l.commit, 0.0);
}

double gelu_ref(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / std::numbers::pi) * (x + 0.044715 * x * x * x)));
}

TEST(RvqLossTest, TinyCodecMatchesScalarRecomputation) {
  RVQConfig cfg = small_config(4, 1, 2, 1);
  cfg.hidden_mult = 1;
  cfg.commitment_weight = 0.7;
  auto codec = RVQCodec::random(cfg, 14);
  std::mt19937_64 rng(15);
  const auto w = random_window(rng, 0.5);
  const auto x = motion::flatten_window(w);
  auto ps = codec.all_params();
  auto P = [&](int i) -> const Matrix& { return ps[static_cast<std::size_t>(i)]->value; };

  // Hand-rolled forward: 300 -> 2 -> 2, quantize, 2 -> 2 -> 300.
  double h[2], z[2];
  for (int j = 0; j < 2; ++j) {
    double acc = P(1)(0, j);
    for (int i = 0; i < 300; ++i) acc += x[i] * P(0)(i, j);
    h[j] = gelu_ref(acc);
  }
  for (int j = 0; j < 2; ++j) z[j] = P(3)(0, j) + h[0] * P(2)(0, j) + h[1] * P(2)(1, j);
  int best = 0;
  double bd = 1e300;
  for (int k = 0; k < 4; ++k) {
    const double d = std::pow(z[0] - P(8)(k, 0), 2) + std::pow(z[1] - P(8)(k, 1), 2);
    if (d < bd) {
      bd = d;
      best = k;
    }
  }
  const double zq[2] = {P(8)(best, 0), P(8)(best, 1)};
  double g[2];
  for (int j = 0; j < 2; ++j) g[j] = gelu_ref(P(5)(0, j) + zq[0] * P(4)(0, j) + zq[1] * P(4)(1, j));
  double recon = 0.0;
  for (int i = 0; i < 300; ++i) {
    const double xh = P(7)(0, i) + g[0] * P(6)(0, i) + g[1] * P(6)(1, i);
    recon += (x[i] - xh) * (x[i] - xh);
  }
  const double commit = bd;
  const auto l = codec.vq_loss(w);
  EXPECT_NEAR(l.recon, recon, 1e-9 * std::max(1.0, recon));
  EXPECT_NEAR(l.commit, commit, 1e-12 + 1e-9 * commit);
  EXPECT_NEAR(l.total, recon + 0.7 * commit, 1e-9 * std::max(1.0, recon));
}

TEST(RvqLossTest, CommitmentGivesCodebooksExactlyZeroGradient) {
  std::mt19937_64 rng(16);
  auto codec = RVQCodec::random(small_config(8, 2, 4), 17);
  const Matrix x = windows_to_matrix(std::vector<MotionWindow>{random_window(rng), random_window(rng)});
  auto params = codec.all_params();
  Gradients grads(const_refs(params));
  ad::Tape tape;
  const auto t = codec.loss_on_tape(tape, x, &grads);
  tape.backward(t.commit);
  for (std::size_t i = 8; i < params.size(); ++i) EXPECT_TRUE((grads[i].array() == 0.0).all());
  EXPECT_GT(grads[0].norm(), 0.0);  // encoder does receive it
}

TEST(RvqLossTest, StraightThroughGradientMatchesSurrogate) {
  std::mt19937_64 rng(18);
  RVQConfig cfg = small_config(8, 2, 3);
  cfg.hidden_mult = 1;
  auto codec = RVQCodec::random(cfg, 19);
  const std::vector<MotionWindow> ws{random_window(rng, 0.3), random_window(rng, 0.3)};
  const auto report = vq_gradcheck(codec, ws);
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_param << "[" << report.worst_index << "]";
  EXPECT_GT(report.entries_checked, 1000u);
}

train::TrainConfig quick_train(int epochs, double lr = 3e-3) {
  train::TrainConfig t;
  t.lr_start = lr;
  t.lr_end = lr * 0.01;
  t.epochs = epochs;
  t.batch_size = 16;
  t.seed = 3;
  return t;
}

TEST(RvqTrainTest, IdenticalWindowsReconstructNearlyExactly) {
  std::mt19937_64 rng(20);
  const auto w = random_window(rng, 0.5);
  const std::vector<MotionWindow> data(64, w);
  auto codec = RVQCodec::random(small_config(4, 1, 4), 21);
  const auto fit = train_codebooks(codec, data, quick_train(500, 1e-2));
  EXPECT_EQ(fit.history.size(), 500u);
  EXPECT_LT(reconstruction_error(codec, data), 1e-4);
}

TEST(RvqTrainTest, CommitmentWeightZeroAndOneBothDecrease) {
  const auto data = factor_windows(128, 22);
  for (double beta : {0.0, 1.0}) {
    RVQConfig cfg = small_config(16, 2, 4);
    cfg.commitment_weight = beta;
    auto codec = RVQCodec::random(cfg, 23);
    const double before = reconstruction_error(codec, data);
    const auto fit = train_codebooks(codec, data, quick_train(8));
    for (const auto& e : fit.history) EXPECT_TRUE(std::isfinite(e.loss));
    EXPECT_LT(fit.history.back().loss, fit.history.front().loss);
    EXPECT_LT(reconstruction_error(codec, data), before);
  }
}

TEST(RvqTrainTest, ReconstructionFallsOverFirstThreeEpochs) {
  const auto data = factor_windows(256, 24);
  auto codec = RVQCodec::random(small_config(16, 2, 4), 25);
  std::vector<double> errs{reconstruction_error(codec, data)};
  RvqTrainOptions opts;
  opts.hooks.after_epoch = [&](int) { errs.push_back(reconstruction_error(codec, data)); };
  train_codebooks(codec, data, quick_train(3), opts);
  ASSERT_EQ(errs.size(), 4u);
  for (std::size_t i = 1; i < errs.size(); ++i) EXPECT_LT(errs[i], errs[i - 1]);
}

TEST(RvqTrainTest, EmptyDatasetRejected) {
  auto codec = RVQCodec::random(small_config(4, 1, 2), 26);
  EXPECT_THROW(train_codebooks(codec, {}, quick_train(1)), ValidationError);
}

TEST(RvqFileTest, CheckpointAndTokenStreamRoundTrip) {
  auto codec = RVQCodec::random(small_config(8, 2, 4, 3), 27);
  const std::string bytes = codec.encode_bytes();
  EXPECT_EQ(bytes.substr(0, 4), "TRVQ");
  const auto back = RVQCodec::decode_bytes(bytes);
  EXPECT_EQ(back.encode_bytes(), bytes);
  EXPECT_EQ(back.config().tokens_per_window(), 6);

  std::mt19937_64 rng(28);
  const std::vector<MotionWindow> ws{random_window(rng), random_window(rng)};
  const auto seq = back.tokenize(ws);
  EXPECT_EQ(seq.tokens.size(), 12u);
  const auto path = (std::filesystem::temp_directory_path() / "teller_tokens.u16").string();
  write_tokens(path, seq.tokens);
  EXPECT_EQ(std::filesystem::file_size(path), 24u);
  EXPECT_EQ(read_tokens(path), seq.tokens);
  EXPECT_EQ(back.detokenize(seq).size(), 2u);
  std::filesystem::remove(path);
  EXPECT_THROW(RVQCodec::decode_bytes("TRVX"), FormatError);
}

}  // namespace
}  // namespace teller::rvq
