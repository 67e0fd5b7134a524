#include "teller/etm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "teller/binary_io.hpp"

namespace teller::etm {

namespace {

constexpr std::uint16_t kMaskVersion = 1;
constexpr std::uint16_t kModelVersion = 1;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void dump(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<int> inverse(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  return inv;
}

}  // namespace

// ---- volumes ----

FeatureVolume FeatureVolume::zeros(int b, int t, int h, int w, int c) {
  FeatureVolume v;
  v.b = b;
  v.t = t;
  v.h = h;
  v.w = w;
  v.c = c;
  if (b < 1 || t < 1 || h < 1 || w < 1 || c < 1) throw ValidationError("FeatureVolume: every dim must be >= 1");
  v.values = Matrix::Zero(static_cast<Eigen::Index>(b) * t * h * w, c);
  return v;
}

void FeatureVolume::validate() const {
  if (b < 1 || t < 1 || h < 1 || w < 1 || c < 1) throw ValidationError("FeatureVolume: every dim must be >= 1");
  if (values.rows() != static_cast<Eigen::Index>(b) * t * h * w || values.cols() != c) {
    throw ValidationError("FeatureVolume: storage does not match dims");
  }
  if (!all_finite(values)) throw ValidationError("FeatureVolume: non-finite value");
}

std::vector<int> temporal_order(int b, int t, int h, int w) {
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(b) * t * h * w);
  for (int bi = 0; bi < b; ++bi) {
    for (int hi = 0; hi < h; ++hi) {
      for (int wi = 0; wi < w; ++wi) {
        for (int ti = 0; ti < t; ++ti) order.push_back(((bi * t + ti) * h + hi) * w + wi);
      }
    }
  }
  return order;
}

TemporalView reshape_temporal(const FeatureVolume& x) {
  x.validate();
  TemporalView v{x.b, x.t, x.h, x.w, x.c, Matrix(x.values.rows(), x.c)};
  const auto order = temporal_order(x.b, x.t, x.h, x.w);
  for (std::size_t r = 0; r < order.size(); ++r) v.rows.row(static_cast<Eigen::Index>(r)) = x.values.row(order[r]);
  return v;
}

FeatureVolume from_temporal(const TemporalView& v) {
  FeatureVolume x = FeatureVolume::zeros(v.b, v.t, v.h, v.w, v.c);
  if (v.rows.rows() != x.values.rows() || v.rows.cols() != v.c) throw ValidationError("from_temporal: shape mismatch");
  const auto order = temporal_order(v.b, v.t, v.h, v.w);
  for (std::size_t r = 0; r < order.size(); ++r) x.values.row(order[r]) = v.rows.row(static_cast<Eigen::Index>(r));
  return x;
}

FeatureVolume concat_batch(std::span<const FeatureVolume> parts) {
  if (parts.empty()) throw ValidationError("concat_batch: nothing to concatenate");
  FeatureVolume out = parts[0];
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.t != out.t || p.h != out.h || p.w != out.w || p.c != out.c) throw ValidationError("concat_batch: shape mismatch");
    rows += p.values.rows();
  }
  out.b = 0;
  out.values.resize(rows, out.c);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.values.middleRows(at, p.values.rows()) = p.values;
    at += p.values.rows();
    out.b += p.b;
  }
  return out;
}

FeatureVolume slice_frames(const FeatureVolume& x, int t0, int count) {
  if (t0 < 0 || count < 1 || t0 + count > x.t) throw ValidationError("slice_frames: range outside volume");
  FeatureVolume out = FeatureVolume::zeros(x.b, count, x.h, x.w, x.c);
  const Eigen::Index frame = static_cast<Eigen::Index>(x.h) * x.w;
  for (int bi = 0; bi < x.b; ++bi) {
    out.values.middleRows(out.row(bi, 0, 0, 0), frame * count) = x.values.middleRows(x.row(bi, t0, 0, 0), frame * count);
  }
  return out;
}

FeatureVolume concat_frames(const FeatureVolume& a, const FeatureVolume& b) {
  if (a.b != b.b || a.h != b.h || a.w != b.w || a.c != b.c) throw ValidationError("concat_frames: shape mismatch");
  FeatureVolume out = FeatureVolume::zeros(a.b, a.t + b.t, a.h, a.w, a.c);
  const Eigen::Index frame = static_cast<Eigen::Index>(a.h) * a.w;
  for (int bi = 0; bi < a.b; ++bi) {
    out.values.middleRows(out.row(bi, 0, 0, 0), frame * a.t) = a.values.middleRows(a.row(bi, 0, 0, 0), frame * a.t);
    out.values.middleRows(out.row(bi, a.t, 0, 0), frame * b.t) = b.values.middleRows(b.row(bi, 0, 0, 0), frame * b.t);
  }
  return out;
}

// ---- masks ----

long RegionMask::sum() const { return std::accumulate(values.begin(), values.end(), 0L); }

long RegionMask::frame_sum(int ti) const {
  const auto n = static_cast<std::ptrdiff_t>(h) * w;
  const auto begin = values.begin() + ti * n;
  return std::accumulate(begin, begin + n, 0L);
}

void RegionMask::validate() const {
  if (t < 1 || h < 1 || w < 1) throw ValidationError("RegionMask: every dim must be >= 1");
  if (values.size() != static_cast<std::size_t>(t) * h * w) throw ValidationError("RegionMask: storage does not match dims");
  if (boxes.size() != static_cast<std::size_t>(t)) throw ValidationError("RegionMask: need one box list per frame");
  const RegionMask ref = from_boxes(t, {h, w}, boxes);
  if (ref.values != values) throw ValidationError("RegionMask: values are not the union of the boxes");
}

RegionMask RegionMask::from_boxes(int t, FrameDims dims, std::vector<std::vector<Box>> boxes) {
  if (boxes.size() != static_cast<std::size_t>(t)) throw ValidationError("RegionMask: need one box list per frame");
  RegionMask m;
  m.t = t;
  m.h = dims.height;
  m.w = dims.width;
  m.values.assign(static_cast<std::size_t>(t) * m.h * m.w, 0);
  for (int ti = 0; ti < t; ++ti) {
    for (const Box& bx : boxes[static_cast<std::size_t>(ti)]) {
      if (bx.row0 < 0 || bx.col0 < 0 || bx.row1 >= m.h || bx.col1 >= m.w || bx.row0 > bx.row1 || bx.col0 > bx.col1) {
        throw ValidationError("RegionMask: box outside frame");
      }
      for (int y = bx.row0; y <= bx.row1; ++y) {
        for (int x = bx.col0; x <= bx.col1; ++x) m.values[(static_cast<std::size_t>(ti) * m.h + y) * m.w + x] = 1;
      }
    }
  }
  m.boxes = std::move(boxes);
  return m;
}

Box landmark_box(const LandmarkSet& landmarks, FrameDims dims, std::span<const int> indices, double margin) {
  if (dims.height < 1 || dims.width < 1) throw ValidationError("landmark_box: empty frame");
  if (indices.empty()) throw ValidationError("landmark_box: no landmark indices");
  if (margin < 0.0) throw ValidationError("landmark_box: negative margin");
  double x0 = INFINITY, y0 = INFINITY, x1 = -INFINITY, y1 = -INFINITY;
  for (int idx : indices) {
    const auto it = landmarks.find(idx);
    if (it == landmarks.end()) throw ValidationError("landmark_box: missing landmark " + std::to_string(idx));
    const Point p = it->second;
    if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= dims.width - 1 && p.y <= dims.height - 1)) {
      throw ValidationError("landmark_box: landmark " + std::to_string(idx) + " outside frame");
    }
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const double grow = margin * std::hypot(x1 - x0, y1 - y0);
  Box b;
  b.row0 = std::clamp(static_cast<int>(std::floor(y0 - grow)), 0, dims.height - 1);
  b.row1 = std::clamp(static_cast<int>(std::ceil(y1 + grow)), 0, dims.height - 1);
  b.col0 = std::clamp(static_cast<int>(std::floor(x0 - grow)), 0, dims.width - 1);
  b.col1 = std::clamp(static_cast<int>(std::ceil(x1 + grow)), 0, dims.width - 1);
  return b;
}

RegionMask build_mask(const LandmarkSet& landmarks, FrameDims dims, std::span<const int> indices, double margin) {
  return RegionMask::from_boxes(1, dims, {{landmark_box(landmarks, dims, indices, margin)}});
}

RegionMask build_region_mask(std::span<const LandmarkSet> frames, FrameDims dims, int t,
                             const std::vector<std::vector<int>>& groups, double margin) {
  if (t < 1) throw ValidationError("build_region_mask: t must be >= 1");
  if (frames.size() != 1 && frames.size() != static_cast<std::size_t>(t)) {
    throw ValidationError("build_region_mask: need one landmark set or one per frame");
  }
  if (groups.empty()) throw ValidationError("build_region_mask: no index groups");
  std::vector<std::vector<Box>> boxes(static_cast<std::size_t>(t));
  for (int ti = 0; ti < t; ++ti) {
    const auto& lm = frames[frames.size() == 1 ? 0 : static_cast<std::size_t>(ti)];
    for (const auto& g : groups) boxes[static_cast<std::size_t>(ti)].push_back(landmark_box(lm, dims, g, margin));
  }
  return RegionMask::from_boxes(t, dims, std::move(boxes));
}

std::vector<LandmarkSet> parse_landmarks(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("landmarks: ") + e.what());
  }
  auto one = [](const nlohmann::json& obj) {
    if (!obj.is_object()) throw FormatError("landmarks: expected an object of index -> [x, y]");
    LandmarkSet s;
    for (const auto& [key, val] : obj.items()) {
      std::size_t used = 0;
      int idx = 0;
      try {
        idx = std::stoi(key, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != key.size()) throw FormatError("landmarks: key '" + key + "' is not an integer");
      if (!val.is_array() || val.size() != 2 || !val[0].is_number() || !val[1].is_number()) {
        throw FormatError("landmarks: value for '" + key + "' must be [x, y]");
      }
      s[idx] = Point{val[0].get<double>(), val[1].get<double>()};
    }
    return s;
  };
  std::vector<LandmarkSet> out;
  if (j.is_array()) {
    for (const auto& f : j) out.push_back(one(f));
  } else {
    out.push_back(one(j));
  }
  if (out.empty()) throw FormatError("landmarks: no frames");
  return out;
}

std::vector<LandmarkSet> read_landmarks(const std::string& path) { return parse_landmarks(slurp(path)); }

std::string landmarks_to_json(std::span<const LandmarkSet> frames) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& f : frames) {
    nlohmann::json obj = nlohmann::json::object();
    for (const auto& [idx, p] : f) obj[std::to_string(idx)] = {p.x, p.y};
    arr.push_back(obj);
  }
  return (frames.size() == 1 ? arr[0] : arr).dump();
}

// TMSK: magic, u16 version, u16 reserved, u32 t, h, w; per frame u32 box
// count and i32 x4 per box; then t*h rows of ceil(w/8) bytes, MSB first.
std::string encode_mask(const RegionMask& mask) {
  mask.validate();
  std::ostringstream ss;
  io::Writer w(ss);
  w.magic("TMSK");
  w.u16(kMaskVersion);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(mask.t));
  w.u32(static_cast<std::uint32_t>(mask.h));
  w.u32(static_cast<std::uint32_t>(mask.w));
  for (const auto& frame : mask.boxes) {
    w.u32(static_cast<std::uint32_t>(frame.size()));
    for (const Box& b : frame) {
      w.i32(b.row0);
      w.i32(b.col0);
      w.i32(b.row1);
      w.i32(b.col1);
    }
  }
  const int row_bytes = (mask.w + 7) / 8;
  std::vector<std::uint8_t> row(static_cast<std::size_t>(row_bytes));
  for (int ti = 0; ti < mask.t; ++ti) {
    for (int y = 0; y < mask.h; ++y) {
      std::fill(row.begin(), row.end(), 0);
      for (int x = 0; x < mask.w; ++x) {
        if (mask.at(ti, y, x)) row[static_cast<std::size_t>(x / 8)] |= static_cast<std::uint8_t>(0x80u >> (x % 8));
      }
      w.bytes(row.data(), row.size());
    }
  }
  return ss.str();
}

RegionMask decode_mask(const std::string& bytes) {
  std::istringstream ss(bytes);
  io::Reader r(ss);
  r.expect_magic("TMSK");
  if (r.u16() != kMaskVersion) throw FormatError("TMSK: unsupported version");
  r.u16();
  RegionMask m;
  m.t = static_cast<int>(r.u32());
  m.h = static_cast<int>(r.u32());
  m.w = static_cast<int>(r.u32());
  if (m.t < 1 || m.h < 1 || m.w < 1 || static_cast<std::size_t>(m.t) * m.h * m.w > (1u << 28)) {
    throw FormatError("TMSK: bad dims");
  }
  m.boxes.resize(static_cast<std::size_t>(m.t));
  for (auto& frame : m.boxes) {
    const std::uint32_t n = r.u32();
    if (n > 4096) throw FormatError("TMSK: too many boxes");
    for (std::uint32_t i = 0; i < n; ++i) {
      Box b;
      b.row0 = r.i32();
      b.col0 = r.i32();
      b.row1 = r.i32();
      b.col1 = r.i32();
      frame.push_back(b);
    }
  }
  m.values.assign(static_cast<std::size_t>(m.t) * m.h * m.w, 0);
  const int row_bytes = (m.w + 7) / 8;
  std::vector<std::uint8_t> row(static_cast<std::size_t>(row_bytes));
  for (int ti = 0; ti < m.t; ++ti) {
    for (int y = 0; y < m.h; ++y) {
      r.bytes(row.data(), row.size());
      for (int x = 0; x < m.w; ++x) {
        m.values[(static_cast<std::size_t>(ti) * m.h + y) * m.w + x] = (row[static_cast<std::size_t>(x / 8)] >> (7 - x % 8)) & 1u;
      }
    }
  }
  if (!r.at_end()) throw FormatError("TMSK: trailing bytes");
  try {
    m.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("TMSK: ") + e.what());
  }
  return m;
}

void write_mask(const std::string& path, const RegionMask& mask) { dump(path, encode_mask(mask)); }
RegionMask read_mask(const std::string& path) { return decode_mask(slurp(path)); }

// ---- loss ----

Matrix loss_weights(const FeatureVolume& like, const RegionMask& mask) {
  if (like.t != kSequenceFrames) throw ValidationError("etm_loss: volumes must hold 10 frames");
  if (mask.t != like.t || mask.h != like.h || mask.w != like.w) throw ValidationError("etm_loss: mask dims differ from volume");
  Matrix wts = Matrix::Zero(like.values.rows(), like.c);
  for (int bi = 0; bi < like.b; ++bi) {
    for (int ti = kContextFrames; ti < like.t; ++ti) {
      for (int y = 0; y < like.h; ++y) {
        for (int x = 0; x < like.w; ++x) {
          if (mask.at(ti, y, x)) wts.row(like.row(bi, ti, y, x)).setOnes();
        }
      }
    }
  }
  return wts;
}

double etm_loss(const FeatureVolume& pred, const FeatureVolume& gt, const RegionMask& mask) {
  if (!pred.same_shape(gt)) throw ValidationError("etm_loss: pred and gt shapes differ");
  pred.validate();
  gt.validate();
  const Matrix wts = loss_weights(gt, mask);
  return ((gt.values - pred.values).array() * wts.array()).square().sum();
}

// ---- module ----

void ETMConfig::validate() const {
  if (channels < 1 || heads < 1 || channels % heads != 0) throw ValidationError("ETMConfig: channels must split evenly into heads");
  if (max_frames < 1) throw ValidationError("ETMConfig: max_frames must be >= 1");
  if (patch < 1 || pixel_channels < 1) throw ValidationError("ETMConfig: bad patch codec dims");
  if (channels < patch_dim()) throw ValidationError("ETMConfig: channels must be >= patch*patch*pixel_channels");
}

FeatureVolume patchify(const FeatureVolume& px, int p) {
  if (p < 1 || px.h % p != 0 || px.w % p != 0) throw ValidationError("patchify: frame size must be a multiple of the patch");
  FeatureVolume out = FeatureVolume::zeros(px.b, px.t, px.h / p, px.w / p, p * p * px.c);
  for (int bi = 0; bi < px.b; ++bi) {
    for (int ti = 0; ti < px.t; ++ti) {
      for (int y = 0; y < px.h; ++y) {
        for (int x = 0; x < px.w; ++x) {
          const Eigen::Index dst = out.row(bi, ti, y / p, x / p);
          const int base = ((y % p) * p + (x % p)) * px.c;
          for (int ci = 0; ci < px.c; ++ci) out.values(dst, base + ci) = px.at(bi, ti, y, x, ci);
        }
      }
    }
  }
  return out;
}

FeatureVolume unpatchify(const FeatureVolume& pt, int p, int pc) {
  if (pt.c != p * p * pc) throw ValidationError("unpatchify: channel count does not match the patch");
  FeatureVolume out = FeatureVolume::zeros(pt.b, pt.t, pt.h * p, pt.w * p, pc);
  for (int bi = 0; bi < out.b; ++bi) {
    for (int ti = 0; ti < out.t; ++ti) {
      for (int y = 0; y < out.h; ++y) {
        for (int x = 0; x < out.w; ++x) {
          const Eigen::Index src = pt.row(bi, ti, y / p, x / p);
          const int base = ((y % p) * p + (x % p)) * pc;
          for (int ci = 0; ci < pc; ++ci) out.at(bi, ti, y, x, ci) = pt.values(src, base + ci);
        }
      }
    }
  }
  return out;
}

ETMModel::ETMModel(const ETMConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int c = cfg_.channels;
  const int pd = cfg_.patch_dim();
  auto add = [&](const char* n, Eigen::Index r, Eigen::Index k) { params_.push_back({n, Matrix::Zero(r, k)}); };
  add("enc_w", pd, c);
  add("enc_b", 1, c);
  add("wq", c, c);
  add("wk", c, c);
  add("wv", c, c);
  add("wo", c, c);
  add("bo", 1, c);
  if (cfg_.time_embedding) add("time_emb", cfg_.max_frames, c);
  add("dec_w", c, pd);
  add("dec_b", 1, pd);
}

ETMModel ETMModel::random(const ETMConfig& cfg, std::uint64_t seed) {
  ETMModel m(cfg);
  std::mt19937_64 rng(mix_seed(seed, 0xe7));
  const int c = m.cfg_.channels;
  auto fill = [&](const char* n, double sd) {
    std::normal_distribution<double> nd(0.0, sd);
    Matrix& v = m.param(n).value;
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = nd(rng);
  };
  const double s = 1.0 / std::sqrt(static_cast<double>(c));
  fill("wq", s);
  fill("wk", s);
  fill("wv", s);
  if (!m.cfg_.zero_init_output) {
    fill("wo", s);
    fill("bo", 0.1);
  }
  if (m.cfg_.time_embedding) fill("time_emb", 1.0);
  const int pd = m.cfg_.patch_dim();
  m.param("enc_w").value.leftCols(pd).setIdentity();
  m.param("dec_w").value.topRows(pd).setIdentity();
  return m;
}

ParamRefs ETMModel::params() {
  ParamRefs out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

ConstParamRefs ETMModel::params() const {
  ConstParamRefs out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

Parameter& ETMModel::param(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("ETMModel: no parameter " + name);
}

const Parameter& ETMModel::param(const std::string& name) const {
  return const_cast<ETMModel*>(this)->param(name);
}

ad::Var ETMModel::refine_on_tape(ad::Tape& tape, ad::Var x, int b, int t, int h, int w, Gradients* grads) const {
  if (cfg_.time_embedding && t > cfg_.max_frames) throw ValidationError("refine: more frames than the time embedding covers");
  auto P = [&](const char* n) { return tape.param(param(n), grads); };
  const auto order = temporal_order(b, t, h, w);
  ad::Var xt = ad::gather_rows(x, order);
  ad::Var qk = xt;
  if (cfg_.time_embedding) {
    std::vector<int> tids(order.size());
    for (std::size_t r = 0; r < tids.size(); ++r) tids[r] = static_cast<int>(r % static_cast<std::size_t>(t));
    qk = ad::add(xt, ad::gather_rows(P("time_emb"), tids));
  }
  ad::AttentionSpec spec;
  spec.heads = cfg_.heads;
  spec.group_len = t;
  ad::Var att = ad::attention(ad::matmul(qk, P("wq")), ad::matmul(qk, P("wk")), ad::matmul(xt, P("wv")), spec);
  ad::Var yt = ad::add(xt, ad::linear(att, P("wo"), P("bo")));
  return ad::gather_rows(yt, inverse(order));
}

FeatureVolume ETMModel::refine(const FeatureVolume& x) const {
  x.validate();
  if (x.c != cfg_.channels) throw ValidationError("refine: channel count differs from the model");
  ad::Tape tape;
  FeatureVolume out = x;
  out.values = tape.value(refine_on_tape(tape, tape.constant(x.values), x.b, x.t, x.h, x.w, nullptr));
  return out;
}

FeatureVolume ETMModel::encode(const FeatureVolume& pixels) const {
  if (pixels.c != cfg_.pixel_channels) throw ValidationError("encode: pixel channel count differs from the model");
  FeatureVolume f = patchify(pixels, cfg_.patch);
  f.values = (f.values * param("enc_w").value).rowwise() + param("enc_b").value.row(0);
  f.c = cfg_.channels;
  return f;
}

FeatureVolume ETMModel::decode(const FeatureVolume& features) const {
  if (features.c != cfg_.channels) throw ValidationError("decode: channel count differs from the model");
  FeatureVolume p = features;
  p.values = (features.values * param("dec_w").value).rowwise() + param("dec_b").value.row(0);
  p.c = cfg_.patch_dim();
  return unpatchify(p, cfg_.patch, cfg_.pixel_channels);
}

FeatureVolume ETMModel::predict(const FeatureVolume& pixels) const { return decode(refine(encode(pixels))); }

ad::Var ETMModel::predict_patches_on_tape(ad::Tape& tape, const FeatureVolume& pixels, Gradients* grads) const {
  if (pixels.c != cfg_.pixel_channels) throw ValidationError("predict: pixel channel count differs from the model");
  const FeatureVolume pt = patchify(pixels, cfg_.patch);
  auto P = [&](const char* n) { return tape.param(param(n), grads); };
  ad::Var f = ad::linear(tape.constant(pt.values), P("enc_w"), P("enc_b"));
  ad::Var r = refine_on_tape(tape, f, pt.b, pt.t, pt.h, pt.w, grads);
  return ad::linear(r, P("dec_w"), P("dec_b"));
}

// TETM: magic, u16 version, u16 flags (bit0 time embedding), u32 channels,
// heads, max_frames, patch, pixel_channels, then f32 parameter blocks.
std::string ETMModel::encode_bytes() const {
  std::ostringstream ss;
  io::Writer w(ss);
  w.magic("TETM");
  w.u16(kModelVersion);
  w.u16(cfg_.time_embedding ? 1 : 0);
  for (int v : {cfg_.channels, cfg_.heads, cfg_.max_frames, cfg_.patch, cfg_.pixel_channels}) w.u32(static_cast<std::uint32_t>(v));
  for (const auto& p : params_) w.f32_block(p.value);
  return ss.str();
}

ETMModel ETMModel::decode_bytes(const std::string& bytes) {
  std::istringstream ss(bytes);
  io::Reader r(ss);
  r.expect_magic("TETM");
  if (r.u16() != kModelVersion) throw FormatError("TETM: unsupported version");
  ETMConfig c;
  c.time_embedding = (r.u16() & 1u) != 0;
  c.channels = static_cast<int>(r.u32());
  c.heads = static_cast<int>(r.u32());
  c.max_frames = static_cast<int>(r.u32());
  c.patch = static_cast<int>(r.u32());
  c.pixel_channels = static_cast<int>(r.u32());
  if (c.channels > 4096 || c.max_frames > 4096 || c.patch > 256 || c.pixel_channels > 16) throw FormatError("TETM: bad dims");
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("TETM: ") + e.what());
  }
  ETMModel m(c);
  for (auto& p : m.params_) p.value = r.f32_block(p.value.rows(), p.value.cols());
  if (!r.at_end()) throw FormatError("TETM: trailing bytes");
  return m;
}

void ETMModel::save(const std::string& path) const { dump(path, encode_bytes()); }
ETMModel ETMModel::load(const std::string& path) { return decode_bytes(slurp(path)); }

// ---- samples, loss, training ----

FeatureVolume EtmSample::input() const { return concat_frames(slice_frames(gt, 0, kContextFrames), degraded); }

std::string EtmSample::problem(const ETMConfig& cfg) const {
  try {
    gt.validate();
    degraded.validate();
  } catch (const ValidationError& e) {
    return e.what();
  }
  if (gt.b != 1 || degraded.b != 1) return "expected a single sequence";
  if (gt.t != kSequenceFrames) return "ground truth must hold 10 frames";
  if (degraded.t != kSequenceFrames - kContextFrames) return "degraded part must hold 5 frames";
  if (gt.h != degraded.h || gt.w != degraded.w || gt.c != degraded.c) return "degraded frames differ in size";
  if (gt.c != cfg.pixel_channels) return "pixel channel count differs from the model";
  if (gt.h % cfg.patch != 0 || gt.w % cfg.patch != 0) return "frame size is not a multiple of the patch";
  if (mask.t != gt.t || mask.h != gt.h || mask.w != gt.w) return "mask dims differ from frames";
  try {
    mask.validate();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return {};
}

namespace {

ad::Var sample_loss(const ETMModel& model, ad::Tape& tape, const EtmSample& s, Gradients* grads) {
  const int p = model.config().patch;
  ad::Var pred = model.predict_patches_on_tape(tape, s.input(), grads);
  FeatureVolume wv = s.gt;
  wv.values = loss_weights(s.gt, s.mask);
  const Matrix w = patchify(wv, p).values;
  const Matrix gt = patchify(s.gt, p).values;
  return ad::sum_squares(ad::hadamard(ad::sub(pred, tape.constant(gt)), w));
}

}  // namespace

ad::Var etm_loss_on_tape(const ETMModel& model, ad::Tape& tape, std::span<const EtmSample> batch, Gradients* grads) {
  if (batch.empty()) throw ValidationError("etm_loss_on_tape: empty batch");
  ad::Var total = sample_loss(model, tape, batch[0], grads);
  for (std::size_t i = 1; i < batch.size(); ++i) total = ad::add(total, sample_loss(model, tape, batch[i], grads));
  return ad::scale(total, 1.0 / static_cast<double>(batch.size()));
}

double evaluate_etm(const ETMModel& model, std::span<const EtmSample> data) {
  if (data.empty()) throw ValidationError("evaluate_etm: empty dataset");
  std::vector<double> losses(data.size());
  train::parallel_for(data.size(), [&](std::size_t i) {
    losses[i] = etm_loss(model.predict(data[i].input()), data[i].gt, data[i].mask);
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(data.size());
}

EtmTrainResult train_etm(ETMModel& model, std::span<const EtmSample> data, const train::TrainConfig& cfg,
                         const EtmTrainOptions& opts) {
  EtmTrainResult res;
  std::vector<EtmSample> good;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string why = data[i].problem(model.config());
    if (why.empty()) {
      good.push_back(data[i]);
      continue;
    }
    ++res.skipped;
    const std::string msg = "train_etm: skipping sample " + std::to_string(i) + ": " + why;
    if (opts.warn) {
      opts.warn(msg);
    } else {
      std::cerr << "warning: " << msg << "\n";
    }
  }
  if (good.empty()) throw ValidationError("train_etm: no usable samples");
  res.initial_loss = evaluate_etm(model, good);
  const ConstParamRefs cparams = const_refs(model.params());
  auto loss = [&](std::span<const std::size_t> batch, Gradients& grads) {
    const double sum = train::accumulate_ordered(
        batch.size(), cparams,
        [&](std::size_t k, Gradients& g) {
          ad::Tape tape;
          ad::Var l = sample_loss(model, tape, good[batch[k]], &g);
          tape.backward(l);
          return tape.value(l)(0, 0);
        },
        grads);
    grads.scale(1.0 / static_cast<double>(batch.size()));
    return sum / static_cast<double>(batch.size());
  };
  res.fit = train::fit(model.params(), good.size(), loss, cfg, opts.hooks);
  res.final_loss = evaluate_etm(model, good);
  return res;
}

GradCheckReport etm_gradcheck(ETMModel& model, std::span<const EtmSample> data, double step) {
  ParamRefs params = model.params();
  Gradients grads(const_refs(params));
  {
    ad::Tape tape;
    tape.backward(etm_loss_on_tape(model, tape, data, &grads));
  }
  auto loss = [&]() {
    ad::Tape tape;
    return tape.value(etm_loss_on_tape(model, tape, data, nullptr))(0, 0);
  };
  return check_gradients(params, loss, grads, step);
}

// ---- synthetic corpus ----

EtmSample make_etm_sample(const EtmSynthConfig& cfg, std::uint64_t seed, LandmarkSet* landmarks_out) {
  if (cfg.height < 4 || cfg.width < 4 || cfg.pixel_channels < 1) throw ValidationError("EtmSynthConfig: frame too small");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  const double two_pi = 2.0 * 3.141592653589793;
  const double fx = 0.5 + u(rng), fy = 0.5 + u(rng), phase = two_pi * u(rng);

  LandmarkSet lm;
  const double cx = cfg.width * (0.3 + 0.4 * u(rng));
  const double cy = cfg.height * (0.3 + 0.4 * u(rng));
  const double rx = 0.15 * cfg.width, ry = 0.15 * cfg.height;
  for (int idx : default_landmark_indices()) {
    lm[idx] = Point{std::clamp(cx + rx * (2 * u(rng) - 1), 0.0, cfg.width - 1.0),
                    std::clamp(cy + ry * (2 * u(rng) - 1), 0.0, cfg.height - 1.0)};
  }
  const FrameDims dims{cfg.height, cfg.width};
  const Box box = landmark_box(lm, dims, default_landmark_indices(), cfg.margin);
  EtmSample s;
  s.mask = RegionMask::from_boxes(kSequenceFrames, dims, std::vector<std::vector<Box>>(kSequenceFrames, {box}));

  // Static accessory texture inside the box.
  Matrix accessory(static_cast<Eigen::Index>(cfg.height) * cfg.width, cfg.pixel_channels);
  for (Eigen::Index i = 0; i < accessory.size(); ++i) accessory.data()[i] = 0.3 + 0.4 * nd(rng);

  s.gt = FeatureVolume::zeros(1, kSequenceFrames, cfg.height, cfg.width, cfg.pixel_channels);
  for (int t = 0; t < kSequenceFrames; ++t) {
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        for (int c = 0; c < cfg.pixel_channels; ++c) {
          s.gt.at(0, t, y, x, c) =
              s.mask.at(t, y, x)
                  ? accessory(static_cast<Eigen::Index>(y) * cfg.width + x, c)
                  : 0.5 * std::sin(two_pi * (fx * x / cfg.width + fy * y / cfg.height) + phase + 0.4 * t + c);
        }
      }
    }
  }
  s.degraded = slice_frames(s.gt, kContextFrames, kSequenceFrames - kContextFrames);
  for (int t = 0; t < s.degraded.t; ++t) {
    const double offset = cfg.jitter_std * nd(rng);
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        if (!s.mask.at(kContextFrames + t, y, x)) continue;
        for (int c = 0; c < cfg.pixel_channels; ++c) s.degraded.at(0, t, y, x, c) += offset + cfg.noise_std * nd(rng);
      }
    }
  }
  if (landmarks_out) *landmarks_out = lm;
  return s;
}

std::vector<EtmSample> make_etm_corpus(const EtmSynthConfig& cfg, int n, std::uint64_t seed) {
  std::vector<EtmSample> out;
  for (int i = 0; i < n; ++i) out.push_back(make_etm_sample(cfg, mix_seed(seed, static_cast<std::uint64_t>(i) + 1)));
  return out;
}

}  // namespace teller::etm
