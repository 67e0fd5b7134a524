#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "teller/autograd.hpp"
#include "teller/common.hpp"
#include "teller/gradcheck.hpp"
#include "teller/trainer.hpp"

namespace teller::etm {

inline constexpr int kSequenceFrames = 10;
inline constexpr int kContextFrames = 5;

// (b, t, h, w, c) volume stored as a (b*t*h*w) x c matrix; row index is
// ((b*T + t)*H + h)*W + w.
struct FeatureVolume {
  int b = 1, t = 1, h = 1, w = 1, c = 1;
  Matrix values;

  static FeatureVolume zeros(int b, int t, int h, int w, int c);
  Eigen::Index row(int bi, int ti, int hi, int wi) const { return ((static_cast<Eigen::Index>(bi) * t + ti) * h + hi) * w + wi; }
  double& at(int bi, int ti, int hi, int wi, int ci) { return values(row(bi, ti, hi, wi), ci); }
  double at(int bi, int ti, int hi, int wi, int ci) const { return values(row(bi, ti, hi, wi), ci); }
  bool same_shape(const FeatureVolume& o) const { return b == o.b && t == o.t && h == o.h && w == o.w && c == o.c; }
  void validate() const;
};

// Sequence view: (b*h*w) groups of t consecutive rows, each row c wide.
// Row ((bi*H + hi)*W + wi)*T + ti holds volume row (bi, ti, hi, wi).
struct TemporalView {
  int b = 1, t = 1, h = 1, w = 1, c = 1;
  Matrix rows;
  int sequences() const { return b * h * w; }
};

// temporal_order()[r] is the volume row placed at sequence-view row r.
std::vector<int> temporal_order(int b, int t, int h, int w);
TemporalView reshape_temporal(const FeatureVolume& x);
FeatureVolume from_temporal(const TemporalView& v);

// Concatenates along b.
FeatureVolume concat_batch(std::span<const FeatureVolume> parts);
FeatureVolume slice_frames(const FeatureVolume& x, int t0, int count);
FeatureVolume concat_frames(const FeatureVolume& a, const FeatureVolume& b);

// ---- region masks ----

struct Point {
  double x = 0.0;  // column
  double y = 0.0;  // row
};
using LandmarkSet = std::map<int, Point>;

struct FrameDims {
  int height = 0;
  int width = 0;
};

// Inclusive pixel rectangle.
struct Box {
  int row0 = 0, col0 = 0, row1 = 0, col1 = 0;
  long area() const { return static_cast<long>(row1 - row0 + 1) * (col1 - col0 + 1); }
  bool operator==(const Box&) const = default;
};

struct RegionMask {
  int t = 1, h = 1, w = 1;
  std::vector<std::uint8_t> values;     // t*h*w, 0 or 1
  std::vector<std::vector<Box>> boxes;  // per frame; mask is their union

  std::uint8_t at(int ti, int y, int x) const { return values[(static_cast<std::size_t>(ti) * h + y) * w + x]; }
  long sum() const;
  long frame_sum(int ti) const;
  // Binary and equal to the union of the boxes.
  void validate() const;
  static RegionMask from_boxes(int t, FrameDims dims, std::vector<std::vector<Box>> boxes);
};

inline const std::vector<int>& default_landmark_indices() {
  static const std::vector<int> kIndices{93, 323, 152};
  return kIndices;
}

// Bounding box of the selected points, grown on every side by margin x the
// box diagonal, clamped to the frame.
Box landmark_box(const LandmarkSet& landmarks, FrameDims dims, std::span<const int> indices,
                 double margin = 0.1);
RegionMask build_mask(const LandmarkSet& landmarks, FrameDims dims,
                      std::span<const int> indices = default_landmark_indices(), double margin = 0.1);
// One LandmarkSet per frame, or a single set broadcast to all t frames. Each
// index group contributes one box; the mask is their union.
RegionMask build_region_mask(std::span<const LandmarkSet> frames, FrameDims dims, int t,
                             const std::vector<std::vector<int>>& groups, double margin = 0.1);

// {"93": [x, y], ...} for one frame, or a JSON array of such objects.
std::vector<LandmarkSet> parse_landmarks(const std::string& json_text);
std::vector<LandmarkSet> read_landmarks(const std::string& path);
std::string landmarks_to_json(std::span<const LandmarkSet> frames);

std::string encode_mask(const RegionMask& mask);
RegionMask decode_mask(const std::string& bytes);
void write_mask(const std::string& path, const RegionMask& mask);
RegionMask read_mask(const std::string& path);

// ---- loss ----

// sum over frames kContextFrames..t-1 of ||(gt - pred) * mask||^2; pixel
// volumes with mask dims (t, h, w), mask broadcast over b and c.
double etm_loss(const FeatureVolume& pred, const FeatureVolume& gt, const RegionMask& mask);
// 0/1 weights in volume row layout marking the entries etm_loss reads.
Matrix loss_weights(const FeatureVolume& like, const RegionMask& mask);

// ---- module ----

struct ETMConfig {
  int channels = 32;       // c
  int heads = 2;
  int max_frames = kSequenceFrames;
  bool time_embedding = true;  // learned per-frame offset on the query/key input
  bool zero_init_output = true;
  int patch = 4;           // toy frame codec: non-overlapping p x p patches
  int pixel_channels = 1;

  int patch_dim() const { return patch * patch * pixel_channels; }
  void validate() const;
};

// Patchify: pixel volume (b,t,H,W,C) -> (b,t,H/p,W/p,p*p*C), entry order
// (py, px, C) inside a patch.
FeatureVolume patchify(const FeatureVolume& pixels, int patch);
FeatureVolume unpatchify(const FeatureVolume& patches, int patch, int pixel_channels);

class ETMModel {
 public:
  ETMModel() = default;
  // Identity patch codec ([I 0] / [I; 0]), random attention projections and
  // a zero (or random) output projection.
  static ETMModel random(const ETMConfig& cfg, std::uint64_t seed);

  const ETMConfig& config() const { return cfg_; }

  // x + temporal attention, one pass, in feature space.
  FeatureVolume refine(const FeatureVolume& x) const;
  FeatureVolume encode(const FeatureVolume& pixels) const;
  FeatureVolume decode(const FeatureVolume& features) const;
  // decode(refine(encode(pixels))), back in pixel layout.
  FeatureVolume predict(const FeatureVolume& pixels) const;

  // Taped refine on volume-layout rows.
  ad::Var refine_on_tape(ad::Tape& tape, ad::Var x, int b, int t, int h, int w, Gradients* grads) const;
  // Taped predict; the result is in patchify() layout.
  ad::Var predict_patches_on_tape(ad::Tape& tape, const FeatureVolume& pixels, Gradients* grads) const;

  ParamRefs params();
  ConstParamRefs params() const;
  Parameter& param(const std::string& name);
  const Parameter& param(const std::string& name) const;

  std::string encode_bytes() const;
  static ETMModel decode_bytes(const std::string& bytes);
  void save(const std::string& path) const;
  static ETMModel load(const std::string& path);

 private:
  explicit ETMModel(const ETMConfig& cfg);

  ETMConfig cfg_;
  std::vector<Parameter> params_;
};

// One training example: ground-truth 10-frame sequence and degraded copies of
// frames 6..10. The model input is the clean prefix followed by the degraded
// suffix.
struct EtmSample {
  FeatureVolume gt;        // b=1, t=10, pixels
  FeatureVolume degraded;  // b=1, t=5
  RegionMask mask;         // t=10
  FeatureVolume input() const;
  // Empty when well formed.
  std::string problem(const ETMConfig& cfg) const;
};

// Mean etm_loss over samples on the tape.
ad::Var etm_loss_on_tape(const ETMModel& model, ad::Tape& tape, std::span<const EtmSample> batch,
                         Gradients* grads);
double evaluate_etm(const ETMModel& model, std::span<const EtmSample> data);

struct EtmTrainOptions {
  train::FitHooks hooks;
  std::function<void(const std::string&)> warn;  // default: stderr
};

struct EtmTrainResult {
  train::FitResult fit;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::size_t skipped = 0;
};

EtmTrainResult train_etm(ETMModel& model, std::span<const EtmSample> data, const train::TrainConfig& cfg,
                         const EtmTrainOptions& opts = {});

GradCheckReport etm_gradcheck(ETMModel& model, std::span<const EtmSample> data, double step = 1e-5);

// ---- synthetic corpus ----

struct EtmSynthConfig {
  int height = 16;
  int width = 16;
  int pixel_channels = 1;
  double jitter_std = 0.3;  // per-frame additive offset inside the mask
  double noise_std = 0.05;  // per-pixel noise inside the mask
  double margin = 0.1;
};

// Drifting background with a static accessory patch inside the landmark box;
// frames 6..10 get the degradation inside the mask only.
EtmSample make_etm_sample(const EtmSynthConfig& cfg, std::uint64_t seed, LandmarkSet* landmarks = nullptr);
std::vector<EtmSample> make_etm_corpus(const EtmSynthConfig& cfg, int n, std::uint64_t seed);

}  // namespace teller::etm
