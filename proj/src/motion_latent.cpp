#include "teller/motion_latent.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "teller/binary_io.hpp"

namespace teller::motion {

namespace {

constexpr std::uint16_t kMotionVersion = 1;

std::string row_label(int r) {
  if (r < kDeformationRows) return "row " + std::to_string(r) + " (deformation " + std::to_string(r + 1) + ")";
  if (r < kDeformationRows + kPoseRows) {
    return "row " + std::to_string(r) + " (pose row " + std::to_string(r - kDeformationRows + 1) + ")";
  }
  return "row " + std::to_string(r) + " (expression offset)";
}

void check_row(const Row3& v, int r) {
  for (double x : v) {
    if (!std::isfinite(x)) throw ValidationError("motion latent: non-finite value in " + row_label(r));
  }
}

}  // namespace

MotionLatent MotionLatent::assemble(std::span<const Row3> deformations, std::span<const Row3> pose_rows,
                                    const Row3& expression_offset) {
  if (deformations.size() != kDeformationRows) {
    throw ValidationError("motion latent: expected 21 deformation rows, got " +
                          std::to_string(deformations.size()));
  }
  if (pose_rows.size() != kPoseRows) {
    throw ValidationError("motion latent: expected 3 pose rows, got " + std::to_string(pose_rows.size()));
  }
  MotionLatent m;
  int r = 0;
  auto put = [&](const Row3& v) {
    check_row(v, r);
    for (int c = 0; c < kLatentCols; ++c) m.values_[static_cast<std::size_t>(r * kLatentCols + c)] = v[c];
    ++r;
  };
  for (const Row3& d : deformations) put(d);
  for (const Row3& p : pose_rows) put(p);
  put(expression_offset);
  return m;
}

MotionLatent MotionLatent::assemble(const Parts& parts) {
  return assemble(parts.deformations, parts.pose_rows, parts.expression_offset);
}

MotionLatent MotionLatent::from_flat(std::span<const double> values) {
  if (values.size() != kLatentSize) {
    throw ValidationError("motion latent: flat form needs 75 values, got " + std::to_string(values.size()));
  }
  MotionLatent m;
  for (int r = 0; r < kLatentRows; ++r) {
    Row3 v{values[static_cast<std::size_t>(3 * r)], values[static_cast<std::size_t>(3 * r + 1)],
           values[static_cast<std::size_t>(3 * r + 2)]};
    check_row(v, r);
  }
  std::copy(values.begin(), values.end(), m.values_.begin());
  return m;
}

Row3 MotionLatent::row(int r) const {
  if (r < 0 || r >= kLatentRows) throw ValidationError("motion latent: row index out of range");
  const auto base = static_cast<std::size_t>(r * kLatentCols);
  return {values_[base], values_[base + 1], values_[base + 2]};
}

MotionLatent::Parts MotionLatent::split() const {
  Parts p;
  for (int i = 0; i < kDeformationRows; ++i) p.deformations[static_cast<std::size_t>(i)] = row(i);
  for (int i = 0; i < kPoseRows; ++i) p.pose_rows[static_cast<std::size_t>(i)] = row(kDeformationRows + i);
  p.expression_offset = row(kLatentRows - 1);
  return p;
}

void validate_window(const MotionWindow& w, int expected_frames) {
  if (static_cast<int>(w.frames.size()) != expected_frames) {
    throw ValidationError("motion window: expected " + std::to_string(expected_frames) + " frames, got " +
                          std::to_string(w.frames.size()));
  }
  if (!(w.frame_rate_hz > 0.0)) throw ValidationError("motion window: frame rate must be positive");
}

std::vector<double> flatten_window(const MotionWindow& w) {
  std::vector<double> out;
  out.reserve(w.frames.size() * kLatentSize);
  for (const auto& f : w.frames) out.insert(out.end(), f.flat().begin(), f.flat().end());
  return out;
}

MotionWindow unflatten_window(std::span<const double> values, double frame_rate_hz) {
  if (values.size() % kLatentSize != 0) {
    throw ValidationError("motion window: flat length is not a multiple of 75");
  }
  MotionWindow w;
  w.frame_rate_hz = frame_rate_hz;
  for (std::size_t off = 0; off < values.size(); off += kLatentSize) {
    w.frames.push_back(MotionLatent::from_flat(values.subspan(off, kLatentSize)));
  }
  return w;
}

MotionWindow interpolate_4_to_5(const MotionWindow& w) {
  validate_window(w, 4);
  MotionWindow out;
  out.frame_rate_hz = w.frame_rate_hz * 5.0 / 4.0;
  out.frames.reserve(5);
  for (int k = 0; k < 5; ++k) {
    if (k == 0) {
      out.frames.push_back(w.frames.front());
      continue;
    }
    if (k == 4) {
      out.frames.push_back(w.frames.back());
      continue;
    }
    const double pos = 0.75 * k;
    const int lo = static_cast<int>(std::floor(pos));
    const double frac = pos - lo;
    const auto& a = w.frames[static_cast<std::size_t>(lo)].flat();
    const auto& b = w.frames[static_cast<std::size_t>(lo + 1)].flat();
    std::array<double, kLatentSize> v{};
    for (int i = 0; i < kLatentSize; ++i) {
      v[static_cast<std::size_t>(i)] = (1.0 - frac) * a[static_cast<std::size_t>(i)] + frac * b[static_cast<std::size_t>(i)];
    }
    out.frames.push_back(MotionLatent::from_flat(v));
  }
  return out;
}

std::vector<MotionWindow> split_windows(std::span<const MotionLatent> frames, int window_frames,
                                        double frame_rate_hz) {
  if (window_frames <= 0) throw ValidationError("split_windows: window size must be positive");
  std::vector<MotionWindow> windows;
  const std::size_t n = frames.size() / static_cast<std::size_t>(window_frames);
  for (std::size_t i = 0; i < n; ++i) {
    MotionWindow w;
    w.frame_rate_hz = frame_rate_hz;
    auto first = frames.begin() + static_cast<std::ptrdiff_t>(i * window_frames);
    w.frames.assign(first, first + window_frames);
    windows.push_back(std::move(w));
  }
  return windows;
}

// ---------------------------------------------------------------------------

std::string encode_motion_bytes(const MotionClip& clip) {
  std::ostringstream os(std::ios::binary);
  io::Writer w(os);
  w.magic("TMLT");
  w.u16(kMotionVersion);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(clip.frames.size()));
  w.f32(static_cast<float>(clip.frame_rate_hz));
  for (const auto& f : clip.frames) {
    for (double v : f.flat()) w.f32(static_cast<float>(v));
  }
  return os.str();
}

MotionClip decode_motion_bytes(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  io::Reader r(is);
  r.expect_magic("TMLT");
  if (r.u16() != kMotionVersion) throw FormatError("TMLT: unsupported version");
  r.u16();
  const std::uint32_t count = r.u32();
  MotionClip clip;
  clip.frame_rate_hz = r.f32();
  clip.frames.reserve(count);
  std::array<double, kLatentSize> v{};
  for (std::uint32_t i = 0; i < count; ++i) {
    for (auto& x : v) x = r.f32();
    clip.frames.push_back(MotionLatent::from_flat(v));
  }
  return clip;
}

void write_motion_file(const std::string& path, const MotionClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write motion file " + path);
  const std::string bytes = encode_motion_bytes(clip);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

MotionClip read_motion_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open motion file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_motion_bytes(ss.str());
}

std::string motion_to_json(const MotionClip& clip) {
  nlohmann::json j;
  j["frame_rate_hz"] = clip.frame_rate_hz;
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : clip.frames) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < kLatentRows; ++r) {
      const Row3 v = f.row(r);
      rows.push_back({v[0], v[1], v[2]});
    }
    frames.push_back(std::move(rows));
  }
  j["frames"] = std::move(frames);
  return j.dump();
}

MotionClip motion_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("motion json: ") + e.what());
  }
  MotionClip clip;
  clip.frame_rate_hz = j.at("frame_rate_hz").get<double>();
  for (const auto& rows : j.at("frames")) {
    if (rows.size() != kLatentRows) throw FormatError("motion json: each frame needs 25 rows");
    std::array<double, kLatentSize> v{};
    for (int r = 0; r < kLatentRows; ++r) {
      const auto& row = rows[static_cast<std::size_t>(r)];
      if (row.size() != kLatentCols) throw FormatError("motion json: each row needs 3 values");
      for (int c = 0; c < kLatentCols; ++c) v[static_cast<std::size_t>(3 * r + c)] = row[static_cast<std::size_t>(c)].get<double>();
    }
    clip.frames.push_back(MotionLatent::from_flat(v));
  }
  return clip;
}

}  // namespace teller::motion
