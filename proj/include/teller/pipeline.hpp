#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "teller/ar_model.hpp"
#include "teller/audio_frontend.hpp"
#include "teller/etm.hpp"
#include "teller/motion_latent.hpp"
#include "teller/rvq.hpp"

namespace teller::pipeline {

inline constexpr double kChunkMs = 200.0;
inline constexpr int kOutputFramesPerChunk = 5;
inline constexpr double kOutputFps = 25.0;

enum class Stage { kAudio = 0, kAr, kMotionDecode, kInterp, kEtm };
inline constexpr int kStageCount = 5;
const char* stage_name(Stage s);
// Throws FormatError for names outside the stage set.
Stage stage_from_name(const std::string& name);

struct StageRecord {
  int chunk = 0;
  Stage stage = Stage::kAudio;
  double start_ms = 0.0;
  double end_ms = 0.0;
  int tokens = 0;
  int frames = 0;
  double duration_ms() const { return end_ms - start_ms; }
  bool operator==(const StageRecord&) const = default;
};

struct Stall {
  int next_chunk = 0;  // chunk the source could not deliver yet
  double at_ms = 0.0;
};

struct LatencyTrace {
  std::vector<StageRecord> records;  // ordered by (chunk, stage)
  std::vector<Stall> stalls;
  // Peak depth of each inter-stage queue (threaded mode only).
  std::vector<std::size_t> queue_peaks;

  int chunks() const;
  // Sum of stage durations per chunk.
  std::vector<double> chunk_compute_ms() const;
  // Throws ValidationError on non-monotone timestamps or a bad frame count.
  void validate() const;
};

std::string trace_to_csv(const LatencyTrace& trace);
LatencyTrace trace_from_csv(const std::string& text);
void export_trace(const LatencyTrace& trace, const std::string& path);
LatencyTrace import_trace(const std::string& path);

// ---- budgets ----

struct StageBudget {
  double audio_encoder_ms = 0.0;
  double stage1_total_ms = 0.0;
  double ar_per_16_tokens_ms = 0.0;
  double motion_decoder_ms = 0.0;
  double stage2_total_ms = 0.0;
  double vae_ms = 0.0;
  double etm_ms = 0.0;

  // 7 / 106 (6 per 16 tokens, decoder 10) / 71 (VAE 25, ETM 21).
  static StageBudget reference();
  void validate(int tokens_per_chunk = 32) const;
};

enum class ScheduleMode { kSequential, kPipelined };

struct ThroughputReport {
  double fps = 0.0;
  double realtime_factor = 0.0;  // compute seconds per second of output
  double max_chunk_latency_ms = 0.0;
  bool verdict = false;
  // Extra detail, not part of the JSON report.
  int chunks = 0;
  int frames = 0;
  double per_chunk_ms = 0.0;
};

ThroughputReport simulate_schedule(const StageBudget& budget, int chunks,
                                   ScheduleMode mode = ScheduleMode::kSequential, int tokens_per_chunk = 32);
// Measured counterpart built from a streaming trace.
ThroughputReport measured_report(const LatencyTrace& trace);
// {"fps", "realtime_factor", "max_chunk_latency_ms", "verdict"}.
std::string report_to_json(const ThroughputReport& report);

// ---- streaming ----

// Toy renderer: 21 keypoints drawn as Gaussian blobs on a square grey frame.
struct RasterConfig {
  int size = 16;
  double sigma = 1.0;
  double scale = 4.0;  // pixels per latent unit
};
etm::FeatureVolume rasterize(std::span<const motion::MotionLatent> frames, const RasterConfig& cfg);

struct SourceResult {
  enum Kind { kChunk, kUnderrun, kEnd } kind = kEnd;
  audio::AudioChunk chunk;
};

class AudioSource {
 public:
  virtual ~AudioSource() = default;
  virtual SourceResult next() = 0;
};

// Serves a fixed sample buffer in 200 ms chunks. `underrun_before` lists chunk
// indices preceded by one underrun each.
class BufferSource : public AudioSource {
 public:
  BufferSource(std::vector<double> samples, int sample_rate_hz, std::vector<int> underrun_before = {});
  SourceResult next() override;

 private:
  std::vector<audio::AudioChunk> chunks_;
  std::vector<int> underruns_;
  std::size_t pos_ = 0;
  bool pending_underrun_done_ = false;
};

struct StreamingModels {
  const rvq::RVQCodec* codec = nullptr;
  const ar::ARModel* ar = nullptr;
  const etm::ETMModel* etm = nullptr;  // optional
};

struct PipelineConfig {
  ar::SamplerConfig sampler;
  audio::FrontendConfig frontend;
  RasterConfig raster;
  bool threaded = true;
  std::size_t queue_capacity = 1;
  bool keep_decode_trace = false;
};

// Throws ValidationError when the models do not fit together.
void check_models(const StreamingModels& models, const PipelineConfig& cfg);

struct StreamResult {
  std::vector<Token> tokens;
  motion::MotionClip motion;             // 25 Hz
  std::vector<etm::FeatureVolume> refined;  // one (1,5,H,W,1) volume per chunk when ETM runs
  LatencyTrace trace;
  std::vector<ar::DecodeTraceEntry> decode_trace;
};

StreamResult run_streaming(AudioSource& source, const StreamingModels& models, const PipelineConfig& cfg);

// Fixed-capacity FIFO with blocking push/pop; close() wakes consumers and
// makes pop() return nullopt once drained.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity == 0 ? 1 : capacity) {}

  void push(T item) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_; });
    items_.push_back(std::move(item));
    peak_ = std::max(peak_, items_.size());
    not_empty_.notify_one();
  }

  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
  }

  std::size_t peak() const {
    std::lock_guard lock(mu_);
    return peak_;
  }

 private:
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
  std::deque<T> items_;
  std::size_t peak_ = 0;
  bool closed_ = false;
};

}  // namespace teller::pipeline
