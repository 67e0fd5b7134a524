#include "teller/binary_io.hpp"

#include <bit>

namespace teller::io {

namespace {

template <typename T>
void store_le(T v, unsigned char* dst) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    dst[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  }
}

template <typename T>
T load_le(const unsigned char* src) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(src[i]) << (8 * i);
  return v;
}

}  // namespace

void Writer::raw(const void* data, std::size_t n) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out_) throw std::runtime_error("write failed");
}

void Writer::magic(std::string_view four_cc) {
  if (four_cc.size() != 4) throw ValidationError("magic must be four characters");
  raw(four_cc.data(), 4);
}

void Writer::u16(std::uint16_t v) {
  unsigned char b[2];
  store_le(v, b);
  raw(b, 2);
}

void Writer::u32(std::uint32_t v) {
  unsigned char b[4];
  store_le(v, b);
  raw(b, 4);
}

void Writer::u64(std::uint64_t v) {
  unsigned char b[8];
  store_le(v, b);
  raw(b, 8);
}

void Writer::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void Writer::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void Writer::f32_block(const Matrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) f32(static_cast<float>(m.data()[i]));
}

void Writer::f64_block(const Matrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) f64(m.data()[i]);
}

void Reader::raw(void* data, std::size_t n) {
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (in_.gcount() != static_cast<std::streamsize>(n)) throw FormatError("unexpected end of file");
}

void Reader::expect_magic(std::string_view four_cc) {
  char got[4];
  raw(got, 4);
  if (std::string_view(got, 4) != four_cc) {
    throw FormatError("bad magic: expected " + std::string(four_cc));
  }
}

std::uint8_t Reader::u8() {
  std::uint8_t v;
  raw(&v, 1);
  return v;
}

std::uint16_t Reader::u16() {
  unsigned char b[2];
  raw(b, 2);
  return load_le<std::uint16_t>(b);
}

std::uint32_t Reader::u32() {
  unsigned char b[4];
  raw(b, 4);
  return load_le<std::uint32_t>(b);
}

std::uint64_t Reader::u64() {
  unsigned char b[8];
  raw(b, 8);
  return load_le<std::uint64_t>(b);
}

float Reader::f32() { return std::bit_cast<float>(u32()); }

double Reader::f64() { return std::bit_cast<double>(u64()); }

Matrix Reader::f32_block(Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(f32());
  return m;
}

Matrix Reader::f64_block(Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = f64();
  return m;
}

bool Reader::at_end() { return in_.peek() == std::char_traits<char>::eof(); }

}  // namespace teller::io
