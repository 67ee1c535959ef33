#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "wig/common.hpp"
#include "wig/corpus.hpp"

namespace wig {

struct TopicScores {
  Vector scores;               // sigma_1 * v_1, one per topic
  double sigma = 0.0;
  bool sign_flipped = false;
  bool used_jacobi_fallback = false;
};

struct PowerIterationOptions {
  double tol = 1e-12;
  std::size_t max_iters = 10000;
  /// Starting vector; defaults to the normalized all-ones vector.
  std::optional<Vector> start;
};

/// Leading right singular pair of the topic matrix by power iteration on
/// T^T T, falling back to a Jacobi eigensolve when it does not converge.
/// The sign is chosen so the scores sum to a nonnegative value.
TopicScores svd_reduce(const Matrix& topics, const PowerIterationOptions& options = {});

/// Eigenvalues (descending) and eigenvectors (as columns) of a symmetric
/// matrix by cyclic Jacobi rotations.
std::pair<Vector, Matrix> jacobi_eigen(const Matrix& symmetric, double tol = 1e-15, std::size_t max_sweeps = 100);

/// score_m = sum_k scores_k * weights(k, m).
Vector score_documents(const TopicScores& scores, const Matrix& weights);

enum class Aggregation { sum, mean };

struct IndexPoint {
  Period period;
  double raw = 0.0;
  std::optional<double> standardized;
  bool empty = false;  // month without documents, raw forced to 0
};

struct IndexSeries {
  std::vector<IndexPoint> points;

  /// CSV "period,raw,standardized"; an undefined standardized value is an
  /// empty field.
  void save_csv(const std::filesystem::path& path) const;
  static IndexSeries load_csv(const std::filesystem::path& path);
};

/// Monthly aggregation over every month between the first and last document.
/// Standardization uses the population standard deviation over emitted
/// months; it is left undefined when there is one month or zero variance.
IndexSeries aggregate(std::span<const double> doc_scores, std::span<const Date> dates,
                      Aggregation mode = Aggregation::sum);

}  // namespace wig
