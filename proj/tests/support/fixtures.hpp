#pragma once

#include <cmath>
#include <vector>

#include "wig/common.hpp"
#include "wig/embeddings.hpp"

namespace fixture {

using wig::Matrix;
using wig::Vector;

/// Five tokens on a line at 0, 1, 2, 3, 4.
inline wig::EmbeddingMatrix five_token_embeddings() {
  wig::EmbeddingMatrix e;
  e.data.resize(5, 2);
  e.data << 0.0, 0.0, 1.0, 0.2, 2.0, -0.1, 3.0, 0.3, 4.0, 0.0;
  return e;
}

inline wig::CostMatrix five_token_cost() { return wig::build_cost_matrix(five_token_embeddings()); }

/// Two topics on five tokens: one leaning left, one leaning right.
inline Matrix five_token_topics() {
  Matrix t(5, 2);
  t << 0.40, 0.05,
       0.30, 0.10,
       0.15, 0.15,
       0.10, 0.30,
       0.05, 0.40;
  return t;
}

inline Vector five_token_weights() {
  Vector w(2);
  w << 0.35, 0.65;
  return w;
}

inline Vector five_token_upstream() {
  Vector u(5);
  u << 0.7, -1.3, 0.4, 2.1, -0.6;
  return u;
}

/// Three documents on the five tokens.
inline std::vector<Vector> five_token_documents() {
  std::vector<Vector> docs(3, Vector(5));
  docs[0] << 0.5, 0.3, 0.1, 0.1, 0.0;
  docs[1] << 0.0, 0.1, 0.2, 0.3, 0.4;
  docs[2] << 0.2, 0.2, 0.2, 0.2, 0.2;
  return docs;
}

inline std::vector<std::vector<double>> to_rows(const Matrix& m) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  return out;
}

inline std::vector<std::vector<double>> to_cols(const Matrix& m) { return to_rows(m.transpose()); }

inline std::vector<double> to_std(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace fixture
