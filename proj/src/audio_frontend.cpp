#include "teller/audio_frontend.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>

#include <unsupported/Eigen/FFT>

#include "teller/binary_io.hpp"

namespace teller::audio {

namespace {

constexpr std::uint16_t kEmbeddingVersion = 1;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

Matrix mel_filters(int bins, int nfft, int rate) {
  const int nbins = nfft / 2 + 1;
  Matrix f = Matrix::Zero(nbins, bins);
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(rate / 2.0);
  std::vector<double> edges(static_cast<std::size_t>(bins + 2));
  for (int i = 0; i < bins + 2; ++i) {
    edges[static_cast<std::size_t>(i)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (bins + 1));
  }
  const double bin_hz = static_cast<double>(rate) / nfft;
  for (int m = 0; m < bins; ++m) {
    const double left = edges[static_cast<std::size_t>(m)];
    const double centre = edges[static_cast<std::size_t>(m + 1)];
    const double right = edges[static_cast<std::size_t>(m + 2)];
    double total = 0.0;
    for (int k = 0; k < nbins; ++k) {
      const double hz = k * bin_hz;
      double w = 0.0;
      if (hz > left && hz <= centre) {
        w = (hz - left) / (centre - left);
      } else if (hz > centre && hz < right) {
        w = (right - hz) / (right - centre);
      }
      f(k, m) = w;
      total += w;
    }
    // Filters narrower than one FFT bin fall back to the nearest bin.
    if (total == 0.0) {
      const int k = std::clamp(static_cast<int>(std::lround(centre / bin_hz)), 0, nbins - 1);
      f(k, m) = 1.0;
    }
  }
  return f;
}

}  // namespace

void FrontendConfig::validate() const {
  if (bins <= 0) throw ValidationError("frontend: bins must be positive");
  if (!(frame_ms > 0.0)) throw ValidationError("frontend: frame length must be positive");
  if (!(log_floor > 0.0)) throw ValidationError("frontend: log floor must be positive");
}

bool supported_rate(int sample_rate_hz) {
  return sample_rate_hz == 8000 || sample_rate_hz == 16000 || sample_rate_hz == 44100 ||
         sample_rate_hz == 48000;
}

int chunk_length(int sample_rate_hz) {
  if (!supported_rate(sample_rate_hz)) {
    throw ValidationError("unsupported sample rate " + std::to_string(sample_rate_hz) +
                          " (expected 8000, 16000, 44100 or 48000)");
  }
  return sample_rate_hz / kChunksPerSecond;
}

std::vector<AudioChunk> chunk_stream(std::span<const double> samples, int sample_rate_hz) {
  const int len = chunk_length(sample_rate_hz);
  std::vector<AudioChunk> chunks;
  for (std::size_t off = 0, idx = 0; off < samples.size(); off += static_cast<std::size_t>(len), ++idx) {
    AudioChunk c;
    c.sample_rate_hz = sample_rate_hz;
    c.chunk_index = static_cast<int>(idx);
    c.valid_samples = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(len), samples.size() - off));
    c.samples.assign(static_cast<std::size_t>(len), 0.0);
    std::copy_n(samples.begin() + static_cast<std::ptrdiff_t>(off), c.valid_samples, c.samples.begin());
    chunks.push_back(std::move(c));
  }
  return chunks;
}

std::vector<double> reassemble(std::span<const AudioChunk> chunks) {
  std::vector<double> out;
  for (const auto& c : chunks) {
    out.insert(out.end(), c.samples.begin(), c.samples.begin() + c.valid_samples);
  }
  return out;
}

// ---------------------------------------------------------------------------

SpectralFrontend::SpectralFrontend(const FrontendConfig& cfg, int sample_rate_hz)
    : cfg_(cfg), rate_(sample_rate_hz) {
  cfg_.validate();
  chunk_len_ = chunk_length(sample_rate_hz);
  hop_ = chunk_len_ / kFramesPerChunk;
  frame_len_ = static_cast<int>(std::lround(cfg_.frame_ms * 1e-3 * sample_rate_hz));
  nfft_ = next_pow2(std::max(frame_len_, 2 * cfg_.bins));
  window_.resize(static_cast<std::size_t>(frame_len_));
  for (int n = 0; n < frame_len_; ++n) {
    window_[static_cast<std::size_t>(n)] =
        frame_len_ == 1 ? 1.0 : 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / (frame_len_ - 1));
  }
  filters_ = mel_filters(cfg_.bins, nfft_, rate_);
}

AudioEmbedding SpectralFrontend::embed(const AudioChunk& chunk) const {
  if (chunk.sample_rate_hz != rate_ || static_cast<int>(chunk.samples.size()) != chunk_len_) {
    throw ValidationError("frontend: chunk does not match the configured sample rate");
  }
  Eigen::FFT<double> fft;
  std::vector<double> frame(static_cast<std::size_t>(nfft_));
  std::vector<std::complex<double>> spectrum;
  const int nbins = nfft_ / 2 + 1;
  RowVector power(nbins);

  AudioEmbedding out;
  out.chunk_index = chunk.chunk_index;
  out.values.resize(kFramesPerChunk, cfg_.bins);
  for (int f = 0; f < kFramesPerChunk; ++f) {
    std::fill(frame.begin(), frame.end(), 0.0);
    const int start = f * hop_;
    for (int n = 0; n < frame_len_ && start + n < chunk_len_; ++n) {
      frame[static_cast<std::size_t>(n)] =
          chunk.samples[static_cast<std::size_t>(start + n)] * window_[static_cast<std::size_t>(n)];
    }
    fft.fwd(spectrum, frame);
    for (int k = 0; k < nbins; ++k) power(k) = std::norm(spectrum[static_cast<std::size_t>(k)]);
    const RowVector energy = power * filters_;
    for (int m = 0; m < cfg_.bins; ++m) {
      out.values(f, m) = std::log(std::max(energy(m), cfg_.log_floor));
    }
  }
  return out;
}

AudioEmbedding embed_chunk(const AudioChunk& chunk, const FrontendConfig& cfg) {
  // Filterbank construction dominates for short inputs; memoise per setup.
  static std::mutex mu;
  static std::map<std::tuple<int, int, double, double>, std::shared_ptr<SpectralFrontend>> cache;
  std::shared_ptr<SpectralFrontend> fe;
  {
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_tuple(chunk.sample_rate_hz, cfg.bins, cfg.frame_ms, cfg.log_floor);
    auto it = cache.find(key);
    if (it == cache.end()) {
      it = cache.emplace(key, std::make_shared<SpectralFrontend>(cfg, chunk.sample_rate_hz)).first;
    }
    fe = it->second;
  }
  return fe->embed(chunk);
}

// ---------------------------------------------------------------------------
// WAV

std::string encode_wav_bytes(const PcmAudio& audio) {
  std::ostringstream os(std::ios::binary);
  io::Writer w(os);
  const auto n = static_cast<std::uint32_t>(audio.samples.size());
  w.magic("RIFF");
  w.u32(36 + n * 2);
  w.magic("WAVE");
  w.magic("fmt ");
  w.u32(16);
  w.u16(1);  // PCM
  w.u16(1);  // mono
  w.u32(static_cast<std::uint32_t>(audio.sample_rate_hz));
  w.u32(static_cast<std::uint32_t>(audio.sample_rate_hz) * 2);
  w.u16(2);
  w.u16(16);
  w.magic("data");
  w.u32(n * 2);
  for (double s : audio.samples) {
    const double clamped = std::clamp(s, -1.0, 1.0);
    const auto q = static_cast<std::int16_t>(std::lround(clamped * 32767.0));
    w.u16(static_cast<std::uint16_t>(q));
  }
  return os.str();
}

PcmAudio decode_wav_bytes(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  io::Reader r(is);
  r.expect_magic("RIFF");
  r.u32();
  r.expect_magic("WAVE");
  int format = 0, channels = 0, bits = 0;
  PcmAudio audio;
  bool have_fmt = false;
  for (;;) {
    char id[4];
    r.bytes(id, 4);
    const std::uint32_t size = r.u32();
    const std::string tag(id, 4);
    if (tag == "fmt ") {
      format = r.u16();
      channels = r.u16();
      audio.sample_rate_hz = static_cast<int>(r.u32());
      r.u32();
      r.u16();
      bits = r.u16();
      std::string skip(size - 16, '\0');
      if (size > 16) r.bytes(skip.data(), skip.size());
      have_fmt = true;
    } else if (tag == "data") {
      if (!have_fmt) throw FormatError("wav: data chunk before fmt chunk");
      if (channels != 1) throw FormatError("wav: only mono audio is supported");
      if (format == 1 && bits == 16) {
        audio.samples.resize(size / 2);
        for (auto& s : audio.samples) s = static_cast<std::int16_t>(r.u16()) / 32768.0;
      } else if (format == 3 && bits == 32) {
        audio.samples.resize(size / 4);
        for (auto& s : audio.samples) s = r.f32();
      } else {
        throw FormatError("wav: expected 16-bit PCM or 32-bit float samples");
      }
      return audio;
    } else {
      std::string skip(size + (size & 1u), '\0');
      r.bytes(skip.data(), skip.size());
    }
  }
}

PcmAudio read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open wav file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_wav_bytes(ss.str());
}

void write_wav(const std::string& path, const PcmAudio& audio) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write wav file " + path);
  const std::string bytes = encode_wav_bytes(audio);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<double> read_raw_f32(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open raw stream " + path);
  io::Reader r(in);
  std::vector<double> out;
  while (!r.at_end()) out.push_back(r.f32());
  return out;
}

void write_embeddings(const std::string& path, std::span<const AudioEmbedding> embeddings) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  io::Writer w(out);
  const int bins = embeddings.empty() ? 0 : static_cast<int>(embeddings.front().values.cols());
  w.magic("TAUD");
  w.u16(kEmbeddingVersion);
  w.u16(static_cast<std::uint16_t>(bins));
  w.u32(static_cast<std::uint32_t>(embeddings.size()));
  w.f32(static_cast<float>(kChunksPerSecond));
  for (const auto& e : embeddings) {
    if (e.values.rows() != kFramesPerChunk || e.values.cols() != bins) {
      throw ValidationError("write_embeddings: inconsistent embedding shapes");
    }
    w.f32_block(e.values);
  }
}

std::vector<AudioEmbedding> read_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  io::Reader r(in);
  r.expect_magic("TAUD");
  if (r.u16() != kEmbeddingVersion) throw FormatError("TAUD: unsupported version");
  const int bins = r.u16();
  const std::uint32_t count = r.u32();
  r.f32();
  std::vector<AudioEmbedding> out(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    out[i].chunk_index = static_cast<int>(i);
    out[i].values = r.f32_block(kFramesPerChunk, bins);
  }
  return out;
}

}  // namespace teller::audio
