#pragma once

#include <complex>
#include <span>
#include <string>
#include <vector>

#include "teller/common.hpp"

namespace teller::audio {

inline constexpr int kChunksPerSecond = 5;  // 200 ms chunks
inline constexpr int kFramesPerChunk = 10;

struct AudioChunk {
  std::vector<double> samples;  // always rate/5 long; tail zero-padded
  int sample_rate_hz = 16000;
  int chunk_index = 0;
  int valid_samples = 0;  // samples before padding
};

struct AudioEmbedding {
  Matrix values;  // kFramesPerChunk x bins
  int chunk_index = 0;
};

struct FrontendConfig {
  int bins = 64;  // 512 reproduces the full-width interface
  double frame_ms = 25.0;
  double log_floor = 1e-10;  // energies are clamped here before the log

  void validate() const;
};

bool supported_rate(int sample_rate_hz);
int chunk_length(int sample_rate_hz);

// Splits a mono stream into 200 ms chunks; the last one is zero-padded.
std::vector<AudioChunk> chunk_stream(std::span<const double> samples, int sample_rate_hz);
// Concatenates chunks dropping padding.
std::vector<double> reassemble(std::span<const AudioChunk> chunks);

// Log filterbank frontend producing a 10 x bins embedding per chunk. Frames
// start every chunk_len/10 samples, span frame_ms, are Hann-windowed and
// zero-padded where they run past the chunk end (no lookahead).
class SpectralFrontend {
 public:
  SpectralFrontend(const FrontendConfig& cfg, int sample_rate_hz);

  AudioEmbedding embed(const AudioChunk& chunk) const;

  int sample_rate_hz() const { return rate_; }
  int hop() const { return hop_; }
  int frame_length() const { return frame_len_; }
  int fft_size() const { return nfft_; }
  const FrontendConfig& config() const { return cfg_; }
  // (nfft/2 + 1) x bins triangular mel weights.
  const Matrix& filterbank() const { return filters_; }
  const std::vector<double>& window() const { return window_; }

 private:
  FrontendConfig cfg_;
  int rate_;
  int chunk_len_;
  int hop_;
  int frame_len_;
  int nfft_;
  std::vector<double> window_;
  Matrix filters_;
};

AudioEmbedding embed_chunk(const AudioChunk& chunk, const FrontendConfig& cfg);

// --- files ---------------------------------------------------------------

struct PcmAudio {
  std::vector<double> samples;
  int sample_rate_hz = 16000;
};

// Mono 16-bit PCM (or 32-bit float) RIFF/WAVE.
PcmAudio read_wav(const std::string& path);
void write_wav(const std::string& path, const PcmAudio& audio);
std::string encode_wav_bytes(const PcmAudio& audio);
PcmAudio decode_wav_bytes(const std::string& bytes);

// Headerless little-endian f32 samples.
std::vector<double> read_raw_f32(const std::string& path);

// "TAUD" container: magic, u16 version, u16 bins, u32 chunk_count,
// f32 chunk rate (5.0); then chunk_count x 10 x bins little-endian f32.
void write_embeddings(const std::string& path, std::span<const AudioEmbedding> embeddings);
std::vector<AudioEmbedding> read_embeddings(const std::string& path);

}  // namespace teller::audio
