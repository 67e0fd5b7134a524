#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "teller/experiments.hpp"

using namespace teller;

namespace {

// Textbook Pearson on two vectors.
double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

exp::ArExperimentConfig tiny() {
  auto c = exp::ArExperimentConfig::standard();
  c.clips = 10;
  c.codec.latent_dim = 4;
  c.codec.codebook_size = 16;
  c.codec.hidden_mult = 1;
  c.codec_train.epochs = 2;
  c.ar.vocab = 16;
  c.ar.d_model = 16;
  c.ar.heads = 2;
  c.ar.layers = 1;
  c.ar_train.epochs = 1;
  return c;
}

}  // namespace

TEST(MeanPearsonTest, MatchesColumnwiseOracle) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  Matrix a(40, 3), b(40, 3);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    a.data()[i] = nd(rng);
    b.data()[i] = 0.5 * a.data()[i] + nd(rng);
  }
  double expect = 0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> x, y;
    for (int r = 0; r < 40; ++r) {
      x.push_back(a(r, c));
      y.push_back(b(r, c));
    }
    expect += pearson(x, y) / 3;
  }
  EXPECT_NEAR(exp::mean_pearson(a, b), expect, 1e-12);
}

TEST(MeanPearsonTest, AffineInvarianceAndConstantColumns) {
  Matrix a(5, 2);
  a << 1, 7, 2, 7, 3, 7, 4, 7, 6, 7;
  Matrix b = 3.0 * a.array() + 2.0;
  EXPECT_NEAR(exp::mean_pearson(a, b), 1.0, 1e-12);
  EXPECT_NEAR(exp::mean_pearson(a, -b), -1.0, 1e-12);
  EXPECT_THROW(exp::mean_pearson(a, b.topRows(3)), ValidationError);
}

TEST(ExperimentsTest, ClipsMatchCorpusSplitAndShapes) {
  const auto cfg = tiny();
  const auto clips = exp::make_clips(cfg.synth, cfg.clips, cfg.frontend);
  ASSERT_EQ(clips.size(), 10u);
  EXPECT_EQ(exp::split(clips, true).size(), 1u);
  for (const auto& c : clips) {
    EXPECT_EQ(c.audio.size(), 5u);
    EXPECT_EQ(c.windows.size(), 5u);
    EXPECT_EQ(c.coupled.rows(), 20);
    EXPECT_EQ(c.audio[0].values.cols(), cfg.frontend.bins);
  }
}

TEST(ExperimentsTest, PipelineRunsEndToEndAtTinyScale) {
  const auto cfg = tiny();
  const auto clips = exp::make_clips(cfg.synth, cfg.clips, cfg.frontend);
  const auto codec = exp::train_codec(exp::split(clips, false), cfg.codec, cfg.codec_train, 5);
  const auto layouts = exp::build_layouts(clips, codec, cfg.ar);
  ASSERT_EQ(layouts.size(), clips.size());
  EXPECT_EQ(layouts[0].tokens.size(), 5u * 32u);
  ar::ARModel model;
  const auto r = exp::run_ar_experiment(cfg, clips, codec, &model);
  EXPECT_EQ(r.ar_history.size(), 1u);
  EXPECT_TRUE(std::isfinite(r.final_train_ce));
  EXPECT_TRUE(std::isfinite(r.val_pearson));
  ar::SamplerConfig greedy;
  greedy.k = 1;
  const auto d = exp::decode_clip(model, codec, clips[0], greedy);
  EXPECT_EQ(d.tokens.size(), 5u * 32u);
  EXPECT_EQ(d.motion.rows(), 20);
}

TEST(ExperimentsTest, SweepProducesOneRowPerBudget) {
  const auto cfg = tiny();
  const auto clips = exp::make_clips(cfg.synth, cfg.clips, cfg.frontend);
  const auto rows = exp::rvq_sweep(clips, cfg.codec, {8, 16}, cfg.codec_train, 1);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].tokens, 8);
  EXPECT_EQ(rows[1].frames, 4);
  EXPECT_TRUE(std::isfinite(rows[1].val_loss));
}

TEST(ExperimentsTest, RegularizerShrinksTheHeadGap) {
  const auto r = exp::regularizer_experiment(1, 10, 4, 256);
  EXPECT_GT(r.gap_without, 0.0);
  EXPECT_LT(r.gap_with, r.gap_without);
}
