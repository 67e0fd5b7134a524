#include "teller/etm.hpp"

#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

namespace teller::etm {
namespace {

FeatureVolume random_volume(int b, int t, int h, int w, int c, std::uint64_t seed) {
  FeatureVolume v = FeatureVolume::zeros(b, t, h, w, c);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  for (Eigen::Index i = 0; i < v.values.size(); ++i) v.values.data()[i] = nd(rng);
  return v;
}

ETMConfig tiny_config() {
  ETMConfig c;
  c.channels = 8;
  c.heads = 2;
  c.patch = 2;
  c.pixel_channels = 1;
  return c;
}

TEST(ReshapeTemporalTest, IndexArithmetic) {
  const auto x = random_volume(1, 5, 2, 2, 3, 1);
  const auto v = reshape_temporal(x);
  EXPECT_EQ(v.sequences(), 4);
  ASSERT_EQ(v.rows.rows(), 20);
  ASSERT_EQ(v.rows.cols(), 3);
  for (int h = 0; h < 2; ++h) {
    for (int w = 0; w < 2; ++w) {
      for (int t = 0; t < 5; ++t) {
        for (int c = 0; c < 3; ++c) EXPECT_EQ(v.rows((h * 2 + w) * 5 + t, c), x.at(0, t, h, w, c));
      }
    }
  }
  const auto one = reshape_temporal(random_volume(1, 1, 1, 1, 1, 2));
  EXPECT_EQ(one.rows.size(), 1);
}

TEST(ReshapeTemporalTest, RoundTripIsBitwise) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto x = random_volume(2, 3 + static_cast<int>(s), 3, 2, 4, s);
    const auto back = from_temporal(reshape_temporal(x));
    EXPECT_TRUE(back.same_shape(x));
    EXPECT_TRUE(back.values == x.values);
  }
}

TEST(RefineTest, ZeroInitOutputIsIdentityBitwise) {
  auto cfg = tiny_config();
  const auto model = ETMModel::random(cfg, 3);
  const auto x = random_volume(2, 10, 3, 3, 8, 4);
  const auto y = model.refine(x);
  EXPECT_TRUE(y.values == x.values);
  EXPECT_TRUE((y.values - x.values).isZero(0.0));
  // Identity patch codec too.
  const auto px = random_volume(1, 10, 4, 4, 1, 5);
  EXPECT_TRUE(model.predict(px).values == px.values);
}

TEST(RefineTest, SingleStepClosedForm) {
  auto cfg = tiny_config();
  cfg.zero_init_output = false;
  const auto model = ETMModel::random(cfg, 6);
  const auto x = random_volume(1, 1, 2, 3, 8, 7);
  Matrix proj = (x.values * model.param("wv").value) * model.param("wo").value;
  proj.rowwise() += model.param("bo").value.row(0);
  const Matrix expect = x.values + proj;
  EXPECT_LT((model.refine(x).values - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RefineTest, AttentionIsPurelyTemporal) {
  auto cfg = tiny_config();
  cfg.zero_init_output = false;
  const auto model = ETMModel::random(cfg, 8);
  const auto x = random_volume(1, 6, 3, 3, 8, 9);
  const auto base = model.refine(x);
  auto xp = x;
  xp.at(0, 2, 1, 2, 0) += 0.5;
  const auto out = model.refine(xp);
  for (int t = 0; t < 6; ++t) {
    for (int h = 0; h < 3; ++h) {
      for (int w = 0; w < 3; ++w) {
        const auto r = x.row(0, t, h, w);
        if (h == 1 && w == 2) {
          EXPECT_FALSE(out.values.row(r) == base.values.row(r)) << t;
        } else {
          EXPECT_TRUE(out.values.row(r) == base.values.row(r)) << t << h << w;
        }
      }
    }
  }
}

TEST(RefineTest, CommutesWithBatchConcatenation) {
  auto cfg = tiny_config();
  cfg.zero_init_output = false;
  const auto model = ETMModel::random(cfg, 10);
  std::vector<FeatureVolume> parts{random_volume(1, 7, 2, 2, 8, 11), random_volume(2, 7, 2, 2, 8, 12)};
  const auto joint = model.refine(concat_batch(parts));
  std::vector<FeatureVolume> outs{model.refine(parts[0]), model.refine(parts[1])};
  EXPECT_LT((joint.values - concat_batch(outs).values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RefineTest, SinglePassOperationCountIndependentOfLength) {
  const auto model = ETMModel::random(tiny_config(), 13);
  std::size_t nodes = 0;
  for (int t : {1, 4, 10}) {
    ad::Tape tape;
    const auto x = random_volume(1, t, 2, 2, 8, 14);
    model.refine_on_tape(tape, tape.constant(x.values), 1, t, 2, 2, nullptr);
    if (nodes == 0) nodes = tape.size();
    EXPECT_EQ(tape.size(), nodes);
  }
}

TEST(MaskTest, RectangleAreaOracle) {
  LandmarkSet lm{{93, {10, 10}}, {323, {30, 10}}, {152, {20, 40}}};
  const auto m = build_mask(lm, {64, 64}, default_landmark_indices(), 0.0);
  EXPECT_EQ(m.boxes[0][0], (Box{10, 10, 40, 30}));
  EXPECT_EQ(m.sum(), 31 * 21);
  EXPECT_EQ(m.sum(), 651);
  EXPECT_EQ(m.at(0, 10, 10), 1);
  EXPECT_EQ(m.at(0, 9, 10), 0);
  EXPECT_EQ(m.at(0, 40, 31), 0);
  m.validate();
}

TEST(MaskTest, DefaultIndicesAndMargin) {
  EXPECT_EQ(default_landmark_indices(), (std::vector<int>{93, 323, 152}));
  LandmarkSet lm{{93, {10, 10}}, {323, {30, 10}}, {152, {20, 40}}};
  const Box b = landmark_box(lm, {64, 64}, default_landmark_indices());
  const double grow = 0.1 * std::hypot(20.0, 30.0);
  EXPECT_EQ(b.row0, static_cast<int>(std::floor(10 - grow)));
  EXPECT_EQ(b.col1, static_cast<int>(std::ceil(30 + grow)));
  // Clamped to the frame.
  const Box c = landmark_box(lm, {41, 31}, default_landmark_indices(), 0.5);
  EXPECT_EQ(c.row1, 40);
  EXPECT_EQ(c.col1, 30);
  EXPECT_EQ(c.row0, 0);
}

TEST(MaskTest, CollinearPointsGiveNonEmptyMask) {
  LandmarkSet lm{{93, {10, 5}}, {323, {10, 15}}, {152, {10, 25}}};
  const auto m = build_mask(lm, {32, 32});
  EXPECT_GT(m.sum(), 21);
  EXPECT_GT(m.boxes[0][0].col1, m.boxes[0][0].col0);
  LandmarkSet same{{93, {4, 4}}, {323, {4, 4}}, {152, {4, 4}}};
  EXPECT_EQ(build_mask(same, {8, 8}).sum(), 1);
}

TEST(MaskTest, Errors) {
  LandmarkSet lm{{93, {1, 1}}, {323, {2, 2}}};
  EXPECT_THROW(build_mask(lm, {8, 8}), ValidationError);
  LandmarkSet out{{93, {1, 1}}, {323, {2, 2}}, {152, {9, 2}}};
  EXPECT_THROW(build_mask(out, {8, 8}), ValidationError);
}

TEST(MaskTest, UnionAndBroadcast) {
  LandmarkSet lm{{1, {0, 0}}, {2, {2, 2}}, {3, {5, 5}}, {4, {7, 7}}};
  const std::vector<LandmarkSet> one{lm};
  const auto m = build_region_mask(one, {8, 8}, 3, {{1, 2}, {3, 4}}, 0.0);
  EXPECT_EQ(m.t, 3);
  EXPECT_EQ(m.frame_sum(0), 9 + 9);
  EXPECT_EQ(m.frame_sum(2), 18);
  LandmarkSet moved{{1, {1, 0}}, {2, {3, 2}}, {3, {4, 5}}, {4, {7, 7}}};
  const std::vector<LandmarkSet> per{lm, moved};
  const auto m2 = build_region_mask(per, {8, 8}, 2, {{1, 2}, {3, 4}}, 0.0);
  EXPECT_EQ(m2.frame_sum(1), 9 + 12);
  EXPECT_EQ(m2.at(1, 0, 0), 0);
  EXPECT_THROW(build_region_mask(per, {8, 8}, 3, {{1, 2}}, 0.0), ValidationError);
  auto broken = m2;
  broken.values[0] ^= 1;
  EXPECT_THROW(broken.validate(), ValidationError);
}

TEST(MaskFileTest, RoundTripAndSize) {
  LandmarkSet lm{{93, {3, 2}}, {323, {11, 2}}, {152, {7, 9}}};
  const auto m = build_region_mask(std::vector<LandmarkSet>{lm}, {12, 13}, 10, {default_landmark_indices()});
  const auto bytes = encode_mask(m);
  EXPECT_EQ(bytes.substr(0, 4), "TMSK");
  EXPECT_EQ(bytes.size(), 4u + 2 + 2 + 12 + 10 * (4 + 16) + 10 * 12 * 2);
  const auto back = decode_mask(bytes);
  EXPECT_EQ(back.values, m.values);
  EXPECT_EQ(back.boxes, m.boxes);
  const auto path = (std::filesystem::temp_directory_path() / "teller_mask.tmsk").string();
  write_mask(path, m);
  EXPECT_EQ(read_mask(path).values, m.values);
  std::filesystem::remove(path);
  EXPECT_THROW(decode_mask(bytes.substr(0, bytes.size() - 1)), FormatError);
}

TEST(LandmarkJsonTest, ParsesSingleAndPerFrame) {
  const auto one = parse_landmarks(R"({"93": [10, 10], "323": [30.5, 10], "152": [20, 40]})");
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].at(323).x, 30.5);
  EXPECT_EQ(one[0].at(152).y, 40.0);
  const auto many = parse_landmarks(R"([{"1": [0, 0]}, {"1": [1, 2]}])");
  ASSERT_EQ(many.size(), 2u);
  EXPECT_EQ(many[1].at(1).y, 2.0);
  EXPECT_EQ(parse_landmarks(landmarks_to_json(many))[1].at(1).x, 1.0);
  EXPECT_THROW(parse_landmarks(R"({"x": [0, 0]})"), FormatError);
  EXPECT_THROW(parse_landmarks(R"({"1": [0]})"), FormatError);
  EXPECT_THROW(parse_landmarks("{"), FormatError);
}

RegionMask example_mask() {
  LandmarkSet lm{{93, {10, 10}}, {323, {30, 10}}, {152, {20, 40}}};
  return build_region_mask(std::vector<LandmarkSet>{lm}, {64, 64}, 10, {default_landmark_indices()}, 0.0);
}

TEST(EtmLossTest, Examples) {
  const auto mask = example_mask();
  const auto gt = random_volume(1, 10, 64, 64, 1, 15);
  EXPECT_EQ(etm_loss(gt, gt, mask), 0.0);
  auto pred = gt;
  pred.values.array() += 1.0;
  EXPECT_EQ(etm_loss(pred, gt, mask), 3255.0);
  EXPECT_EQ(5 * 651, 3255);
  const auto other = random_volume(1, 9, 64, 64, 1, 16);
  EXPECT_THROW(etm_loss(other, other, mask), ValidationError);
  EXPECT_THROW(etm_loss(gt, random_volume(1, 10, 64, 64, 2, 1), mask), ValidationError);
}

TEST(EtmLossTest, LocalityIsExact) {
  const auto mask = example_mask();
  const auto gt = random_volume(1, 10, 64, 64, 1, 17);
  auto pred = random_volume(1, 10, 64, 64, 1, 18);
  const double base = etm_loss(pred, gt, mask);
  std::mt19937_64 rng(19);
  std::normal_distribution<double> nd(0.0, 10.0);
  int outside = 0;
  for (int t = 0; t < 10; ++t) {
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        if (t >= 5 && mask.at(t, y, x)) continue;
        pred.at(0, t, y, x, 0) += nd(rng);
        ++outside;
      }
    }
  }
  EXPECT_EQ(etm_loss(pred, gt, mask), base);
  EXPECT_EQ(outside, 10 * 4096 - 5 * 651);
}

TEST(EtmLossTest, PredGradientVanishesOutsideRegion) {
  const auto mask = example_mask();
  const auto gt = random_volume(1, 10, 64, 64, 1, 20);
  const auto pred = random_volume(1, 10, 64, 64, 1, 21);
  const Matrix w = loss_weights(gt, mask);
  ad::Tape tape;
  ad::Var p = tape.variable(pred.values);
  ad::Var l = ad::sum_squares(ad::hadamard(ad::sub(p, tape.constant(gt.values)), w));
  tape.backward(l);
  EXPECT_NEAR(tape.value(l)(0, 0), etm_loss(pred, gt, mask), 1e-9);
  const Matrix g = tape.grad(p);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    if (w.data()[i] == 0.0) ASSERT_EQ(g.data()[i], 0.0);
  }
  EXPECT_GT(g.cwiseAbs().sum(), 0.0);
}

EtmSynthConfig tiny_synth() {
  EtmSynthConfig s;
  s.height = 4;
  s.width = 4;
  return s;
}

TEST(EtmSampleTest, ConditioningUsesCleanPrefix) {
  const auto s = make_etm_sample(EtmSynthConfig{}, 22);
  EXPECT_TRUE(s.problem(ETMConfig{}).empty());
  const auto in = s.input();
  EXPECT_EQ(in.t, 10);
  EXPECT_TRUE(slice_frames(in, 0, 5).values == slice_frames(s.gt, 0, 5).values);
  EXPECT_TRUE(slice_frames(in, 5, 5).values == s.degraded.values);
  // Degradation stays inside the mask.
  const auto clean_tail = slice_frames(s.gt, 5, 5);
  for (int t = 0; t < 5; ++t) {
    for (int y = 0; y < 16; ++y) {
      for (int x = 0; x < 16; ++x) {
        if (!s.mask.at(5 + t, y, x)) EXPECT_EQ(s.degraded.at(0, t, y, x, 0), clean_tail.at(0, t, y, x, 0));
      }
    }
  }
  EXPECT_GT(etm_loss(in, s.gt, s.mask), 0.0);
}

TEST(EtmGradTest, TinyModelPasses) {
  auto cfg = tiny_config();
  cfg.zero_init_output = false;
  auto model = ETMModel::random(cfg, 23);
  const auto data = make_etm_corpus(tiny_synth(), 2, 24);
  const auto r = etm_gradcheck(model, data);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param << "[" << r.worst_index << "]";
  EXPECT_EQ(r.entries_checked, parameter_count(const_refs(model.params())));
}

TEST(EtmTrainTest, IdentityDegradationStartsAtZero) {
  auto synth = EtmSynthConfig{};
  synth.jitter_std = 0.0;
  synth.noise_std = 0.0;
  const auto data = make_etm_corpus(synth, 4, 25);
  auto model = ETMModel::random(ETMConfig{}, 26);
  train::TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 4;
  const auto r = train_etm(model, data, tc);
  EXPECT_EQ(r.initial_loss, 0.0);
}

TEST(EtmTrainTest, MalformedSamplesAreSkipped) {
  auto data = make_etm_corpus(tiny_synth(), 3, 27);
  data[1].degraded = slice_frames(data[1].degraded, 0, 4);
  std::vector<std::string> warnings;
  EtmTrainOptions opts;
  opts.warn = [&](const std::string& m) { warnings.push_back(m); };
  auto model = ETMModel::random(tiny_config(), 28);
  train::TrainConfig tc;
  tc.epochs = 1;
  const auto r = train_etm(model, data, tc, opts);
  EXPECT_EQ(r.skipped, 1u);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("sample 1"), std::string::npos);
  std::vector<EtmSample> none{data[1]};
  EXPECT_THROW(train_etm(model, none, tc, opts), ValidationError);
}

TEST(EtmTrainTest, LearnsToUndoJitter) {
  const auto data = make_etm_corpus(EtmSynthConfig{}, 32, 29);
  auto model = ETMModel::random(ETMConfig{}, 30);
  train::TrainConfig tc;
  tc.lr_start = 1e-2;
  tc.lr_end = 1e-4;
  tc.epochs = 60;
  tc.batch_size = 8;
  const auto r = train_etm(model, data, tc);
  RecordProperty("initial_loss", std::to_string(r.initial_loss));
  RecordProperty("final_loss", std::to_string(r.final_loss));
  EXPECT_LT(r.final_loss, 0.25 * r.initial_loss);
  const auto held = make_etm_corpus(EtmSynthConfig{}, 16, 31);
  const auto fresh = ETMModel::random(ETMConfig{}, 30);
  EXPECT_LT(evaluate_etm(model, held), 0.25 * evaluate_etm(fresh, held));
}

TEST(EtmFileTest, RoundTrip) {
  auto cfg = tiny_config();
  cfg.zero_init_output = false;
  const auto m = ETMModel::random(cfg, 32);
  const auto bytes = m.encode_bytes();
  EXPECT_EQ(bytes.substr(0, 4), "TETM");
  EXPECT_EQ(ETMModel::decode_bytes(bytes).encode_bytes(), bytes);
  EXPECT_THROW(ETMModel::decode_bytes(bytes + "x"), FormatError);
}

}  // namespace
}  // namespace teller::etm
