#include "teller/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace teller::pipeline {

namespace {

constexpr const char* kCsvHeader = "chunk,stage,start_ms,end_ms,tokens,frames";

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError("trace: bad number '" + s + "'");
  return v;
}

int parse_int(const std::string& s) {
  int v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError("trace: bad integer '" + s + "'");
  return v;
}

}  // namespace

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kAudio: return "audio";
    case Stage::kAr: return "ar";
    case Stage::kMotionDecode: return "motion_decode";
    case Stage::kInterp: return "interp";
    case Stage::kEtm: return "etm";
  }
  return "?";
}

Stage stage_from_name(const std::string& name) {
  for (int i = 0; i < kStageCount; ++i) {
    if (name == stage_name(static_cast<Stage>(i))) return static_cast<Stage>(i);
  }
  throw FormatError("trace: unknown stage '" + name + "'");
}

// ---- trace ----

int LatencyTrace::chunks() const {
  int n = 0;
  for (const auto& r : records) n = std::max(n, r.chunk + 1);
  return n;
}

std::vector<double> LatencyTrace::chunk_compute_ms() const {
  std::vector<double> out(static_cast<std::size_t>(chunks()), 0.0);
  for (const auto& r : records) out[static_cast<std::size_t>(r.chunk)] += r.duration_ms();
  return out;
}

void LatencyTrace::validate() const {
  std::vector<double> last(kStageCount, -INFINITY);
  for (const auto& r : records) {
    if (r.chunk < 0) throw ValidationError("trace: negative chunk index");
    if (!(r.end_ms >= r.start_ms)) throw ValidationError("trace: stage ends before it starts");
    auto& prev = last[static_cast<std::size_t>(r.stage)];
    if (r.start_ms < prev) throw ValidationError("trace: stage timestamps go backwards");
    prev = r.end_ms;
    if ((r.stage == Stage::kInterp || r.stage == Stage::kEtm) && r.frames != kOutputFramesPerChunk) {
      throw ValidationError("trace: output stages must emit 5 frames per chunk");
    }
  }
}

std::string trace_to_csv(const LatencyTrace& trace) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : trace.records) {
    out += std::to_string(r.chunk) + "," + stage_name(r.stage) + "," + fmt(r.start_ms) + "," + fmt(r.end_ms) + "," +
           std::to_string(r.tokens) + "," + std::to_string(r.frames) + "\n";
  }
  return out;
}

LatencyTrace trace_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw FormatError("trace: missing header");
  LatencyTrace t;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 6) throw FormatError("trace: expected 6 fields in '" + line + "'");
    t.records.push_back({parse_int(f[0]), stage_from_name(f[1]), parse_double(f[2]), parse_double(f[3]),
                         parse_int(f[4]), parse_int(f[5])});
  }
  return t;
}

void export_trace(const LatencyTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << trace_to_csv(trace);
  if (!out) throw std::runtime_error("write failed: " + path);
}

LatencyTrace import_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return trace_from_csv(ss.str());
}

// ---- budgets ----

StageBudget StageBudget::reference() { return {7.0, 106.0, 6.0, 10.0, 71.0, 25.0, 21.0}; }

void StageBudget::validate(int tokens_per_chunk) const {
  for (double v : {audio_encoder_ms, stage1_total_ms, ar_per_16_tokens_ms, motion_decoder_ms, stage2_total_ms, vae_ms, etm_ms}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("StageBudget: budgets must be finite and >= 0");
  }
  if (ar_per_16_tokens_ms * tokens_per_chunk / 16.0 + motion_decoder_ms > stage1_total_ms) {
    throw ValidationError("StageBudget: stage 1 components exceed the stage 1 total");
  }
  if (vae_ms + etm_ms > stage2_total_ms) throw ValidationError("StageBudget: stage 2 components exceed the stage 2 total");
}

ThroughputReport simulate_schedule(const StageBudget& budget, int chunks, ScheduleMode mode, int tokens_per_chunk) {
  if (chunks < 1) throw ValidationError("simulate_schedule: chunks must be >= 1");
  budget.validate(tokens_per_chunk);
  ThroughputReport r;
  r.chunks = chunks;
  r.frames = chunks * kOutputFramesPerChunk;
  const double per_chunk = budget.audio_encoder_ms + budget.stage1_total_ms + budget.stage2_total_ms;
  // Steady-state interval between finished chunks.
  const double interval = mode == ScheduleMode::kSequential
                              ? per_chunk
                              : std::max({budget.audio_encoder_ms, budget.stage1_total_ms, budget.stage2_total_ms});
  r.per_chunk_ms = per_chunk;
  r.max_chunk_latency_ms = per_chunk;
  r.verdict = interval <= kChunkMs;
  r.realtime_factor = interval * audio::kChunksPerSecond / 1000.0;
  // Frames leave at the slower of the audio clock and the compute clock.
  const double output_ms = chunks * std::max(kChunkMs, interval);
  r.fps = r.frames / (output_ms / 1000.0);
  return r;
}

ThroughputReport measured_report(const LatencyTrace& trace) {
  ThroughputReport r;
  const auto compute = trace.chunk_compute_ms();
  r.chunks = static_cast<int>(compute.size());
  if (r.chunks == 0) {
    r.verdict = true;
    return r;
  }
  for (const auto& rec : trace.records) {
    if (rec.stage == Stage::kInterp) r.frames += rec.frames;
  }
  std::vector<double> first(compute.size(), INFINITY), last(compute.size(), -INFINITY);
  for (const auto& rec : trace.records) {
    auto c = static_cast<std::size_t>(rec.chunk);
    first[c] = std::min(first[c], rec.start_ms);
    last[c] = std::max(last[c], rec.end_ms);
  }
  double total = 0.0, steady = 0.0;
  for (std::size_t c = 0; c < compute.size(); ++c) {
    total += compute[c];
    r.max_chunk_latency_ms = std::max(r.max_chunk_latency_ms, last[c] - first[c]);
    // The first chunk carries one-off warm-up; exclude it when there is more.
    if (c > 0 || compute.size() == 1) steady = std::max(steady, compute[c]);
  }
  r.per_chunk_ms = total / r.chunks;
  r.verdict = steady <= kChunkMs;
  r.realtime_factor = total / (r.chunks * kChunkMs);
  const double output_ms = r.chunks * std::max(kChunkMs, r.per_chunk_ms);
  r.fps = r.frames / (output_ms / 1000.0);
  return r;
}

std::string report_to_json(const ThroughputReport& r) {
  nlohmann::ordered_json j;
  j["fps"] = r.fps;
  j["realtime_factor"] = r.realtime_factor;
  j["max_chunk_latency_ms"] = r.max_chunk_latency_ms;
  j["verdict"] = r.verdict;
  return j.dump(2) + "\n";
}

// ---- rasterizer ----

etm::FeatureVolume rasterize(std::span<const motion::MotionLatent> frames, const RasterConfig& cfg) {
  if (frames.empty()) throw ValidationError("rasterize: no frames");
  if (cfg.size < 2 || !(cfg.sigma > 0.0)) throw ValidationError("rasterize: bad raster config");
  auto out = etm::FeatureVolume::zeros(1, static_cast<int>(frames.size()), cfg.size, cfg.size, 1);
  const double centre = 0.5 * (cfg.size - 1);
  const double radius = 0.3 * cfg.size;
  const double inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto parts = frames[f].split();
    const auto& shift = parts.expression_offset;
    for (int k = 0; k < motion::kDeformationRows; ++k) {
      const double a = 2.0 * 3.141592653589793 * k / motion::kDeformationRows;
      const auto& d = parts.deformations[static_cast<std::size_t>(k)];
      const double px = centre + radius * std::cos(a) + cfg.scale * (d[0] + shift[0]);
      const double py = centre + radius * std::sin(a) + cfg.scale * (d[1] + shift[1]);
      for (int y = 0; y < cfg.size; ++y) {
        for (int x = 0; x < cfg.size; ++x) {
          const double dx = x - px, dy = y - py;
          out.at(0, static_cast<int>(f), y, x, 0) += std::exp(-(dx * dx + dy * dy) * inv);
        }
      }
    }
  }
  return out;
}

// ---- sources ----

BufferSource::BufferSource(std::vector<double> samples, int rate, std::vector<int> underrun_before)
    : chunks_(audio::chunk_stream(samples, rate)), underruns_(std::move(underrun_before)) {}

SourceResult BufferSource::next() {
  SourceResult r;
  if (pos_ >= chunks_.size()) return r;
  const int idx = static_cast<int>(pos_);
  if (!pending_underrun_done_ && std::find(underruns_.begin(), underruns_.end(), idx) != underruns_.end()) {
    pending_underrun_done_ = true;
    r.kind = SourceResult::kUnderrun;
    return r;
  }
  pending_underrun_done_ = false;
  r.kind = SourceResult::kChunk;
  r.chunk = chunks_[pos_++];
  return r;
}

// ---- streaming ----

void check_models(const StreamingModels& m, const PipelineConfig& cfg) {
  if (!m.codec || !m.ar) throw ValidationError("pipeline: codec and AR model are required");
  const auto& c = m.codec->config();
  const auto& a = m.ar->config();
  if (c.residual_stages == 0) throw ValidationError("pipeline: codec has no tokens (bypass mode)");
  if (a.vocab != c.codebook_size) throw ValidationError("pipeline: AR vocabulary differs from codebook size K");
  if (a.tokens_per_chunk != c.tokens_per_window()) throw ValidationError("pipeline: AR tokens per chunk differ from codec tokens_per_window");
  if (c.window_frames != 4) throw ValidationError("pipeline: codec windows must hold 4 frames");
  if (a.audio_positions != audio::kFramesPerChunk) throw ValidationError("pipeline: AR expects a different audio length");
  if (a.audio_dim != cfg.frontend.bins) throw ValidationError("pipeline: AR audio width differs from frontend bins");
  cfg.frontend.validate();
  cfg.sampler.validate(a.vocab);
  if (m.etm) {
    const auto& e = m.etm->config();
    if (e.pixel_channels != 1 || cfg.raster.size % e.patch != 0) throw ValidationError("pipeline: ETM does not fit the raster");
    if (e.time_embedding && e.max_frames < etm::kSequenceFrames) throw ValidationError("pipeline: ETM covers fewer than 10 frames");
  }
}

namespace {

using Clock = std::chrono::steady_clock;

struct Work {
  int index = 0;
  audio::AudioChunk chunk;
  audio::AudioEmbedding emb;
  std::vector<Token> tokens;
  std::vector<ar::DecodeTraceEntry> dtrace;
  motion::MotionWindow window4;
  motion::MotionWindow window5;
  etm::FeatureVolume refined;
  bool has_refined = false;
  std::vector<StageRecord> records;
};

// Stage bodies; each owns whatever state it carries between chunks.
class Stages {
 public:
  Stages(const StreamingModels& m, const PipelineConfig& cfg) : m_(m), cfg_(cfg), state_(*m.ar, cfg.sampler) {}

  void run(Stage s, Work& w) {
    switch (s) {
      case Stage::kAudio:
        w.emb = audio::embed_chunk(w.chunk, cfg_.frontend);
        w.emb.chunk_index = w.index;
        break;
      case Stage::kAr:
        w.tokens = m_.ar->decode_chunk(state_, w.emb, cfg_.keep_decode_trace ? &w.dtrace : nullptr);
        break;
      case Stage::kMotionDecode:
        w.window4 = m_.codec->decode(m_.codec->dequantize(w.tokens));
        break;
      case Stage::kInterp:
        w.window5 = motion::interpolate_4_to_5(w.window4);
        break;
      case Stage::kEtm:
        if (m_.etm) {
          const auto current = rasterize(w.window5.frames, cfg_.raster);
          // The previous chunk's refined frames are the clean context; the
          // first chunk conditions on itself.
          const auto& context = prev_.has_value() ? *prev_ : current;
          const auto out = m_.etm->predict(etm::concat_frames(context, current));
          w.refined = etm::slice_frames(out, etm::kContextFrames, kOutputFramesPerChunk);
          w.has_refined = true;
          prev_ = w.refined;
        }
        break;
    }
  }

  static std::pair<int, int> counts(Stage s, const Work& w) {
    switch (s) {
      case Stage::kAr: return {static_cast<int>(w.tokens.size()), 0};
      case Stage::kMotionDecode: return {0, static_cast<int>(w.window4.frames.size())};
      case Stage::kInterp: return {0, static_cast<int>(w.window5.frames.size())};
      case Stage::kEtm: return {0, static_cast<int>(w.window5.frames.size())};
      default: return {0, 0};
    }
  }

 private:
  const StreamingModels& m_;
  const PipelineConfig& cfg_;
  ar::DecodeState state_;
  std::optional<etm::FeatureVolume> prev_;
};

void collect(StreamResult& res, Work&& w, bool keep_trace) {
  res.tokens.insert(res.tokens.end(), w.tokens.begin(), w.tokens.end());
  for (auto& f : w.window5.frames) res.motion.frames.push_back(f);
  if (w.has_refined) res.refined.push_back(std::move(w.refined));
  if (keep_trace) res.decode_trace.insert(res.decode_trace.end(), w.dtrace.begin(), w.dtrace.end());
  res.trace.records.insert(res.trace.records.end(), w.records.begin(), w.records.end());
}

}  // namespace

StreamResult run_streaming(AudioSource& source, const StreamingModels& models, const PipelineConfig& cfg) {
  check_models(models, cfg);
  StreamResult res;
  res.motion.frame_rate_hz = kOutputFps;
  Stages stages(models, cfg);
  const auto t0 = Clock::now();
  auto now_ms = [&] { return std::chrono::duration<double, std::milli>(Clock::now() - t0).count(); };

  // Pulls the next chunk, recording stalls; nullopt at end of stream.
  int next_index = 0;
  auto pull = [&](std::vector<Stall>& stalls) -> std::optional<Work> {
    for (;;) {
      SourceResult r = source.next();
      if (r.kind == SourceResult::kEnd) return std::nullopt;
      if (r.kind == SourceResult::kUnderrun) {
        stalls.push_back({next_index, now_ms()});
        std::this_thread::yield();
        continue;
      }
      Work w;
      w.index = next_index++;
      w.chunk = std::move(r.chunk);
      return w;
    }
  };

  if (!cfg.threaded) {
    while (auto w = pull(res.trace.stalls)) {
      double start = now_ms();
      for (int s = 0; s < kStageCount; ++s) {
        const auto stage = static_cast<Stage>(s);
        stages.run(stage, *w);
        const double end = now_ms();
        const auto [tok, fr] = Stages::counts(stage, *w);
        w->records.push_back({w->index, stage, start, end, tok, fr});
        start = end;
      }
      collect(res, std::move(*w), cfg.keep_decode_trace);
    }
    return res;
  }

  // One thread per stage, bounded queues in between, a sink on this thread.
  std::vector<std::unique_ptr<BoundedQueue<Work>>> queues;
  for (int i = 0; i < kStageCount + 1; ++i) queues.push_back(std::make_unique<BoundedQueue<Work>>(cfg.queue_capacity));
  std::vector<std::exception_ptr> errors(kStageCount + 1);
  std::vector<Stall> stalls;
  std::vector<std::thread> threads;

  threads.emplace_back([&] {
    try {
      while (auto w = pull(stalls)) queues[0]->push(std::move(*w));
    } catch (...) {
      errors[kStageCount] = std::current_exception();
    }
    queues[0]->close();
  });
  for (int s = 0; s < kStageCount; ++s) {
    threads.emplace_back([&, s] {
      const auto stage = static_cast<Stage>(s);
      bool failed = false;
      while (auto w = queues[static_cast<std::size_t>(s)]->pop()) {
        if (failed) continue;  // drain so upstream never blocks
        try {
          const double start = now_ms();
          stages.run(stage, *w);
          const auto [tok, fr] = Stages::counts(stage, *w);
          w->records.push_back({w->index, stage, start, now_ms(), tok, fr});
          queues[static_cast<std::size_t>(s) + 1]->push(std::move(*w));
        } catch (...) {
          errors[static_cast<std::size_t>(s)] = std::current_exception();
          failed = true;
        }
      }
      queues[static_cast<std::size_t>(s) + 1]->close();
    });
  }
  while (auto w = queues[kStageCount]->pop()) collect(res, std::move(*w), cfg.keep_decode_trace);
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  res.trace.stalls = std::move(stalls);
  for (int i = 0; i < kStageCount; ++i) res.trace.queue_peaks.push_back(queues[static_cast<std::size_t>(i)]->peak());
  return res;
}

}  // namespace teller::pipeline
