#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string_view>

#include "wig/common.hpp"

namespace wig::binary {

static_assert(std::endian::native == std::endian::little, "binary containers assume a little-endian host");

inline void write_magic(std::ostream& out, std::string_view magic) { out.write(magic.data(), 4); }

inline void expect_magic(std::istream& in, std::string_view magic, const std::string& what) {
  std::array<char, 4> got{};
  in.read(got.data(), 4);
  if (!in || std::string_view(got.data(), 4) != magic)
    throw ValidationError(what + ": bad magic (expected \"" + std::string(magic) + "\")");
}

template <class T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_pod(std::istream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ValidationError(what + ": truncated file");
  return v;
}

/// Row-major f64 payload.
inline void write_matrix(std::ostream& out, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) write_pod(out, m(i, j));
}

inline Matrix read_matrix(std::istream& in, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = read_pod<double>(in, what);
  return m;
}

}  // namespace wig::binary
