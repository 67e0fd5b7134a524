#include "teller/audio_frontend.hpp"

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

namespace teller::audio {
namespace {

std::vector<double> tone(double hz, int rate, int n, double amp = 0.5) {
  std::vector<double> s(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) s[i] = amp * std::sin(2.0 * std::numbers::pi * hz * i / rate);
  return s;
}

TEST(ChunkStreamTest, ExactDivisionGivesFiveChunks) {
  const std::vector<double> s(16000, 0.1);
  const auto chunks = chunk_stream(s, 16000);
  ASSERT_EQ(chunks.size(), 5u);
  for (const auto& c : chunks) EXPECT_EQ(c.samples.size(), 3200u);
  EXPECT_EQ(chunk_length(16000), 3200);
}

TEST(ChunkStreamTest, RemainderIsZeroPadded) {
  std::vector<double> s(16100);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = 0.001 * static_cast<double>(i % 97) + 0.01;
  const auto chunks = chunk_stream(s, 16000);
  ASSERT_EQ(chunks.size(), 6u);
  const auto& last = chunks.back();
  EXPECT_EQ(last.chunk_index, 5);
  EXPECT_EQ(last.valid_samples, 100);
  ASSERT_EQ(last.samples.size(), 3200u);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(last.samples[i], s[16000 + i]);
  for (int i = 100; i < 3200; ++i) EXPECT_EQ(last.samples[i], 0.0);
  EXPECT_EQ(reassemble(chunks), s);
}

TEST(ChunkStreamTest, UnsupportedRateRejected) {
  const std::vector<double> s(100, 0.0);
  EXPECT_THROW(chunk_stream(s, 22050), ValidationError);
  for (int rate : {8000, 16000, 44100, 48000}) EXPECT_EQ(chunk_length(rate), rate / 5);
}

TEST(ChunkStreamTest, ReassemblyIsLossless) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int rate : {8000, 44100}) {
    for (int n : {1, 1599, 1600, 1601, 9000, 20000}) {
      std::vector<double> s(static_cast<std::size_t>(n));
      for (auto& v : s) v = u(rng);
      EXPECT_EQ(reassemble(chunk_stream(s, rate)), s);
    }
  }
}

TEST(EmbedChunkTest, SilentChunkIsFloor) {
  FrontendConfig cfg;
  const auto chunks = chunk_stream(std::vector<double>(3200, 0.0), 16000);
  const auto e = embed_chunk(chunks[0], cfg);
  ASSERT_EQ(e.values.rows(), 10);
  ASSERT_EQ(e.values.cols(), 64);
  EXPECT_TRUE((e.values.array() == std::log(cfg.log_floor)).all());
}

// Direct O(N^2) DFT, independent of the FFT path.
TEST(EmbedChunkTest, ToneMatchesDirectDft) {
  FrontendConfig cfg;
  SpectralFrontend fe(cfg, 16000);
  const auto chunk = chunk_stream(tone(440.0, 16000, 3200), 16000)[0];
  const auto e = fe.embed(chunk);

  const int nfft = fe.fft_size();
  const int flen = 400;
  const int hop = 320;
  EXPECT_EQ(fe.hop(), hop);
  EXPECT_EQ(fe.frame_length(), flen);
  double worst = 0.0;
  for (int f = 0; f < 10; ++f) {
    std::vector<double> frame(static_cast<std::size_t>(nfft), 0.0);
    for (int n = 0; n < flen; ++n) {
      const int idx = f * hop + n;
      const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / (flen - 1));
      if (idx < 3200) frame[n] = chunk.samples[idx] * w;
    }
    RowVector power(nfft / 2 + 1);
    for (int k = 0; k <= nfft / 2; ++k) {
      std::complex<double> acc = 0.0;
      for (int n = 0; n < nfft; ++n) {
        acc += frame[n] * std::polar(1.0, -2.0 * std::numbers::pi * k * n / nfft);
      }
      power(k) = std::norm(acc);
    }
    const RowVector energy = power * fe.filterbank();
    for (int m = 0; m < 64; ++m) {
      const double ref = std::log(std::max(energy(m), cfg.log_floor));
      const double rel = std::abs(e.values(f, m) - ref) / std::max(std::abs(ref), 1e-12);
      worst = std::max(worst, rel);
    }
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(EmbedChunkTest, FilterbankIsTriangularAndCoversEveryBand) {
  FrontendConfig cfg;
  for (int bins : {64, 512}) {
    cfg.bins = bins;
    SpectralFrontend fe(cfg, 16000);
    const Matrix& fb = fe.filterbank();
    EXPECT_EQ(fb.cols(), bins);
    EXPECT_TRUE((fb.array() >= 0.0).all());
    EXPECT_TRUE((fb.array() <= 1.0).all());
    for (int m = 0; m < bins; ++m) EXPECT_GT(fb.col(m).sum(), 0.0);
  }
}

TEST(EmbedChunkTest, FaithfulModeShape) {
  FrontendConfig cfg;
  cfg.bins = 512;
  const auto chunk = chunk_stream(tone(440.0, 16000, 3200), 16000)[0];
  const auto e = embed_chunk(chunk, cfg);
  EXPECT_EQ(e.values.rows(), 10);
  EXPECT_EQ(e.values.cols(), 512);
  EXPECT_TRUE(all_finite(e.values));
}

TEST(EmbedChunkTest, ShiftByOneHopShiftsRows) {
  // Periodic signal with several partials; interior frames never touch padding.
  std::vector<double> s(6400);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double t = static_cast<double>(i) / 16000.0;
    s[i] = 0.3 * std::sin(2 * std::numbers::pi * 250 * t) + 0.2 * std::sin(2 * std::numbers::pi * 1250 * t + 0.3);
  }
  std::vector<double> shifted(s.begin() + 320, s.begin() + 320 + 3200);
  std::vector<double> base(s.begin(), s.begin() + 3200);
  FrontendConfig cfg;
  const auto a = embed_chunk(chunk_stream(base, 16000)[0], cfg);
  const auto b = embed_chunk(chunk_stream(shifted, 16000)[0], cfg);
  for (int f = 0; f < 8; ++f) {
    for (int m = 0; m < 64; ++m) EXPECT_NEAR(b.values(f, m), a.values(f + 1, m), 1e-9);
  }
}

TEST(EmbedChunkTest, GainNeverDecreasesValues) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd(0.0, 0.1);
  FrontendConfig cfg;
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> s(3200);
    for (auto& v : s) v = nd(rng);
    // Leave some frames silent so the floor branch is exercised.
    std::fill(s.begin(), s.begin() + 900, 0.0);
    const auto base = embed_chunk(chunk_stream(s, 16000)[0], cfg);
    for (double g : {1.001, 1.5, 4.0}) {
      std::vector<double> scaled = s;
      for (auto& v : scaled) v *= g;
      const auto up = embed_chunk(chunk_stream(scaled, 16000)[0], cfg);
      EXPECT_TRUE((up.values.array() >= base.values.array()).all());
    }
  }
}

TEST(EmbedChunkTest, AllRatesProduceTenFrames) {
  FrontendConfig cfg;
  for (int rate : {8000, 16000, 44100, 48000}) {
    const auto c = chunk_stream(tone(300.0, rate, rate / 5), rate)[0];
    const auto e = embed_chunk(c, cfg);
    EXPECT_EQ(e.values.rows(), 10);
    EXPECT_TRUE(all_finite(e.values));
  }
}

TEST(AudioFileTest, WavRoundTripWithinQuantisation) {
  PcmAudio a;
  a.sample_rate_hz = 16000;
  a.samples = tone(440.0, 16000, 1000, 0.9);
  const auto back = decode_wav_bytes(encode_wav_bytes(a));
  EXPECT_EQ(back.sample_rate_hz, 16000);
  ASSERT_EQ(back.samples.size(), a.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) EXPECT_NEAR(back.samples[i], a.samples[i], 1.0 / 16000.0);
  EXPECT_EQ(encode_wav_bytes(a).size(), 44u + 2000u);
  EXPECT_THROW(decode_wav_bytes("RIFX0000WAVE"), FormatError);
}

TEST(AudioFileTest, RawF32AndEmbeddingContainer) {
  const auto dir = std::filesystem::temp_directory_path();
  const auto raw = (dir / "teller_raw.f32").string();
  {
    std::ofstream out(raw, std::ios::binary);
    const float vals[] = {0.25f, -0.5f, 1.0f};
    out.write(reinterpret_cast<const char*>(vals), sizeof(vals));
  }
  EXPECT_EQ(read_raw_f32(raw), (std::vector<double>{0.25, -0.5, 1.0}));

  FrontendConfig cfg;
  std::vector<AudioEmbedding> embs;
  for (const auto& c : chunk_stream(tone(700.0, 16000, 6400), 16000)) embs.push_back(embed_chunk(c, cfg));
  const auto path = (dir / "teller_emb.taud").string();
  write_embeddings(path, embs);
  EXPECT_EQ(std::filesystem::file_size(path), 16u + 2u * 10u * 64u * 4u);
  const auto back = read_embeddings(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_TRUE(back[1].values == Matrix(embs[1].values.cast<float>().cast<double>()));
  std::filesystem::remove(raw);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace teller::audio
