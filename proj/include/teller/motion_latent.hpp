#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "teller/common.hpp"

namespace teller::motion {

inline constexpr int kDeformationRows = 21;
inline constexpr int kPoseRows = 3;
inline constexpr int kLatentRows = 25;  // 21 deformations + 3 pose rows + 1 expression offset
inline constexpr int kLatentCols = 3;
inline constexpr int kLatentSize = kLatentRows * kLatentCols;

using Row3 = std::array<double, 3>;

// One frame's 25x3 motion descriptor, stored flattened in row order
// [d_1 .. d_21, r_1, r_2, r_3, t].
class MotionLatent {
 public:
  struct Parts {
    std::array<Row3, kDeformationRows> deformations{};
    std::array<Row3, kPoseRows> pose_rows{};
    Row3 expression_offset{};
  };

  MotionLatent() = default;

  // Throws ValidationError naming the first row holding a non-finite value.
  static MotionLatent assemble(std::span<const Row3> deformations, std::span<const Row3> pose_rows,
                               const Row3& expression_offset);
  static MotionLatent assemble(const Parts& parts);
  static MotionLatent from_flat(std::span<const double> values);

  Parts split() const;
  Row3 row(int r) const;
  const std::array<double, kLatentSize>& flat() const { return values_; }
  double operator[](int i) const { return values_[static_cast<std::size_t>(i)]; }

  friend bool operator==(const MotionLatent&, const MotionLatent&) = default;

 private:
  std::array<double, kLatentSize> values_{};
};

struct MotionWindow {
  std::vector<MotionLatent> frames;
  double frame_rate_hz = 20.0;
};

// Throws unless `w` has `expected_frames` frames and a positive rate.
void validate_window(const MotionWindow& w, int expected_frames);

std::vector<double> flatten_window(const MotionWindow& w);
MotionWindow unflatten_window(std::span<const double> values, double frame_rate_hz);

// Resamples 4 frames onto 5 at positions k * 3/4 (k = 0..4) of the input
// timeline with piecewise-linear interpolation; endpoints are copied exactly.
MotionWindow interpolate_4_to_5(const MotionWindow& w);

// Groups consecutive frames into windows of `window_frames`; trailing frames
// that do not fill a window are dropped.
std::vector<MotionWindow> split_windows(std::span<const MotionLatent> frames, int window_frames,
                                        double frame_rate_hz);

// --- files ---------------------------------------------------------------

struct MotionClip {
  std::vector<MotionLatent> frames;
  double frame_rate_hz = 20.0;
};

// 16-byte header: "TMLT", u16 version, u16 reserved, u32 frame_count,
// f32 frame_rate; then frame_count * 75 little-endian f32.
void write_motion_file(const std::string& path, const MotionClip& clip);
MotionClip read_motion_file(const std::string& path);
std::string encode_motion_bytes(const MotionClip& clip);
MotionClip decode_motion_bytes(const std::string& bytes);

// Lossless debug form: {"frame_rate_hz": r, "frames": [[[x,y,z] x 25], ...]}.
std::string motion_to_json(const MotionClip& clip);
MotionClip motion_from_json(const std::string& text);

}  // namespace teller::motion
