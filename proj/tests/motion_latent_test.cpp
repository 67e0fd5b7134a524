#include "teller/motion_latent.hpp"

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include <gtest/gtest.h>

namespace teller::motion {
namespace {

MotionLatent::Parts random_parts(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  MotionLatent::Parts p;
  for (auto& r : p.deformations) r = {u(rng), u(rng), u(rng)};
  for (auto& r : p.pose_rows) r = {u(rng), u(rng), u(rng)};
  p.expression_offset = {u(rng), u(rng), u(rng)};
  return p;
}

MotionWindow random_window(std::mt19937_64& rng, int frames, double rate = 20.0) {
  MotionWindow w;
  w.frame_rate_hz = rate;
  for (int i = 0; i < frames; ++i) w.frames.push_back(MotionLatent::assemble(random_parts(rng)));
  return w;
}

TEST(MotionLatentTest, ZeroInputsFlattenToZeroVector) {
  MotionLatent::Parts p;
  const auto m = MotionLatent::assemble(p);
  ASSERT_EQ(m.flat().size(), 75u);
  for (double v : m.flat()) EXPECT_EQ(v, 0.0);
}

TEST(MotionLatentTest, RowOrderPutsFirstPoseRowAtRow22) {
  MotionLatent::Parts p;
  for (int i = 0; i < kDeformationRows; ++i) p.deformations[i] = {1.0 * i, 0.0, 0.0};
  p.pose_rows[0] = {7.0, 8.0, 9.0};
  p.pose_rows[1] = {10.0, 11.0, 12.0};
  p.expression_offset = {-1.0, -2.0, -3.0};
  const auto m = MotionLatent::assemble(p);
  EXPECT_EQ(m.flat().size(), 75u);
  // Row 22 (1-based) is index 21.
  EXPECT_EQ(m.row(21), (Row3{7.0, 8.0, 9.0}));
  EXPECT_EQ(m[21 * 3], 7.0);
  EXPECT_EQ(m.row(22), (Row3{10.0, 11.0, 12.0}));
  EXPECT_EQ(m.row(24), (Row3{-1.0, -2.0, -3.0}));
}

TEST(MotionLatentTest, AssembleSplitRoundTripIsBitwise) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto parts = random_parts(rng);
    const auto back = MotionLatent::assemble(parts).split();
    EXPECT_EQ(back.deformations, parts.deformations);
    EXPECT_EQ(back.pose_rows, parts.pose_rows);
    EXPECT_EQ(back.expression_offset, parts.expression_offset);
  }
}

TEST(MotionLatentTest, NonFiniteRejectedNamingRow) {
  MotionLatent::Parts p;
  p.pose_rows[1][2] = std::numeric_limits<double>::quiet_NaN();
  try {
    MotionLatent::assemble(p);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("row 22"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("pose row 2"), std::string::npos) << e.what();
  }
  MotionLatent::Parts q;
  q.deformations[4][0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(MotionLatent::assemble(q), ValidationError);
}

TEST(MotionWindowTest, FlattenZeroWindow) {
  MotionWindow w;
  w.frames.assign(4, MotionLatent{});
  const auto flat = flatten_window(w);
  ASSERT_EQ(flat.size(), 300u);
  for (double v : flat) EXPECT_EQ(v, 0.0);
}

TEST(MotionWindowTest, FlattenUnflattenIdentity) {
  std::mt19937_64 rng(6);
  const auto w = random_window(rng, 4);
  const auto flat = flatten_window(w);
  EXPECT_EQ(flat.size(), 300u);
  const auto back = unflatten_window(flat, w.frame_rate_hz);
  EXPECT_EQ(back.frames, w.frames);
  EXPECT_EQ(flat[75], w.frames[1][0]);
}

TEST(InterpolateTest, ConstantSignalStaysConstant) {
  std::mt19937_64 rng(7);
  const auto m = MotionLatent::assemble(random_parts(rng));
  MotionWindow w;
  w.frames.assign(4, m);
  const auto out = interpolate_4_to_5(w);
  ASSERT_EQ(out.frames.size(), 5u);
  for (const auto& f : out.frames) {
    for (int i = 0; i < kLatentSize; ++i) EXPECT_DOUBLE_EQ(f[i], m[i]);
  }
}

TEST(InterpolateTest, LinearRampResamplesAtThreeQuarterSteps) {
  std::array<double, kLatentSize> u{};
  u[10] = 1.0;  // unit vector
  MotionWindow w;
  for (int k = 0; k < 4; ++k) {
    auto v = u;
    v[10] = k;
    w.frames.push_back(MotionLatent::from_flat(v));
  }
  const auto out = interpolate_4_to_5(w);
  const double expected[] = {0.0, 0.75, 1.5, 2.25, 3.0};
  for (int k = 0; k < 5; ++k) {
    EXPECT_DOUBLE_EQ(out.frames[k][10], expected[k]);
    EXPECT_EQ(out.frames[k][11], 0.0);
  }
}

TEST(InterpolateTest, TwentyHzBecomesTwentyFiveHz) {
  std::mt19937_64 rng(8);
  const auto out = interpolate_4_to_5(random_window(rng, 4, 20.0));
  EXPECT_EQ(out.frames.size(), 5u);
  EXPECT_DOUBLE_EQ(out.frame_rate_hz, 25.0);
}

TEST(InterpolateTest, WrongLengthRejected) {
  std::mt19937_64 rng(9);
  EXPECT_THROW(interpolate_4_to_5(random_window(rng, 3)), ValidationError);
  EXPECT_THROW(interpolate_4_to_5(random_window(rng, 5)), ValidationError);
}

TEST(InterpolateTest, EndpointsLinearityAndConvexity) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> coef(-3.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto w1 = random_window(rng, 4);
    const auto w2 = random_window(rng, 4);
    const double a = coef(rng), b = coef(rng);
    MotionWindow combo;
    const auto f1 = flatten_window(w1);
    const auto f2 = flatten_window(w2);
    std::vector<double> fc(f1.size());
    for (std::size_t i = 0; i < fc.size(); ++i) fc[i] = a * f1[i] + b * f2[i];
    combo = unflatten_window(fc, 20.0);

    const auto o1 = interpolate_4_to_5(w1);
    const auto o2 = interpolate_4_to_5(w2);
    const auto oc = interpolate_4_to_5(combo);
    EXPECT_EQ(o1.frames.front(), w1.frames.front());
    EXPECT_EQ(o1.frames.back(), w1.frames.back());
    for (int k = 0; k < 5; ++k) {
      for (int i = 0; i < kLatentSize; ++i) {
        EXPECT_NEAR(oc.frames[k][i], a * o1.frames[k][i] + b * o2.frames[k][i], 1e-12);
        double lo = w1.frames[0][i], hi = lo;
        for (const auto& f : w1.frames) {
          lo = std::min(lo, f[i]);
          hi = std::max(hi, f[i]);
        }
        EXPECT_GE(o1.frames[k][i], lo);
        EXPECT_LE(o1.frames[k][i], hi);
      }
    }
  }
}

TEST(MotionFileTest, HeaderIsSixteenBytesAndRoundTrips) {
  std::mt19937_64 rng(11);
  MotionClip clip;
  clip.frame_rate_hz = 25.0;
  for (int i = 0; i < 3; ++i) clip.frames.push_back(MotionLatent::assemble(random_parts(rng)));
  const std::string bytes = encode_motion_bytes(clip);
  ASSERT_EQ(bytes.size(), 16u + 3u * 75u * 4u);
  EXPECT_EQ(bytes.substr(0, 4), "TMLT");
  const auto back = decode_motion_bytes(bytes);
  EXPECT_EQ(back.frame_rate_hz, 25.0);
  ASSERT_EQ(back.frames.size(), 3u);
  for (int i = 0; i < kLatentSize; ++i) {
    EXPECT_EQ(back.frames[2][i], static_cast<double>(static_cast<float>(clip.frames[2][i])));
  }
  EXPECT_EQ(encode_motion_bytes(back), bytes);

  const auto path = (std::filesystem::temp_directory_path() / "teller_motion_test.tmlt").string();
  write_motion_file(path, clip);
  EXPECT_EQ(encode_motion_bytes(read_motion_file(path)), bytes);
  std::filesystem::remove(path);
}

TEST(MotionFileTest, JsonIsLossless) {
  std::mt19937_64 rng(12);
  MotionClip clip;
  clip.frame_rate_hz = 20.0;
  for (int i = 0; i < 2; ++i) clip.frames.push_back(MotionLatent::assemble(random_parts(rng)));
  const auto back = motion_from_json(motion_to_json(clip));
  EXPECT_EQ(back.frames, clip.frames);
  EXPECT_EQ(back.frame_rate_hz, 20.0);
}

TEST(MotionFileTest, BadMagicRejected) {
  EXPECT_THROW(decode_motion_bytes(std::string("XXXX") + std::string(12, '\0')), FormatError);
  EXPECT_THROW(decode_motion_bytes("TM"), FormatError);
}

}  // namespace
}  // namespace teller::motion
