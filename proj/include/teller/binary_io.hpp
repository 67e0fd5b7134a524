#pragma once

// Little-endian primitives shared by every on-disk container.

#include <array>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "teller/common.hpp"

namespace teller::io {

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void magic(std::string_view four_cc);
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v);
  void f64(double v);
  // Writes every entry in row-major order.
  void f32_block(const Matrix& m);
  void f64_block(const Matrix& m);
  void bytes(const void* data, std::size_t n) { raw(data, n); }

 private:
  void raw(const void* data, std::size_t n);
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  // Throws FormatError when the next four bytes differ from `four_cc`.
  void expect_magic(std::string_view four_cc);
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32();
  double f64();
  // Reads rows*cols values into a fresh matrix.
  Matrix f32_block(Eigen::Index rows, Eigen::Index cols);
  Matrix f64_block(Eigen::Index rows, Eigen::Index cols);
  void bytes(void* data, std::size_t n) { raw(data, n); }
  bool at_end();

 private:
  void raw(void* data, std::size_t n);
  std::istream& in_;
};

}  // namespace teller::io
