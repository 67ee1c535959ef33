#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "wig/common.hpp"
#include "wig/corpus.hpp"
#include "wig/embeddings.hpp"

namespace wig {

struct ClusterAssignment {
  std::size_t k = 0;
  std::vector<std::size_t> assignment;  // token id -> cluster
  Matrix centroids;                     // k x D
  /// Sum of squared distances to the assigned centroid: entry 0 after
  /// seeding, then one entry per Lloyd iteration.
  std::vector<double> objective_history;
  std::size_t iterations = 0;

  double objective() const { return objective_history.empty() ? 0.0 : objective_history.back(); }
};

/// Lloyd's algorithm with k-means++ seeding on squared Euclidean distance.
/// Empty clusters are reseeded with the point farthest from its centroid.
ClusterAssignment kmeans(const EmbeddingMatrix& emb, std::size_t k, std::uint64_t seed, std::size_t max_iters = 300);

/// Base-token selection: floor(max_vocab / k) most frequent tokens per
/// cluster (ties to the lower id), then the remaining slots from the global
/// frequency order. Returns min(max_vocab, N) sorted ids.
std::vector<TokenId> select_base(const ClusterAssignment& assign, const Vocabulary& vocab, std::size_t max_vocab);

struct LassoResult {
  Vector alpha;
  bool converged = false;
  std::size_t sweeps = 0;
  double kkt_residual = 0.0;
};

/// 0.5 * ||target - basis^T alpha||^2 + lambda * ||alpha||_1, with basis rows
/// as regressors.
double lasso_objective(const Vector& target, const Matrix& basis, const Vector& alpha, double lambda);

/// Largest violation of the Lasso optimality conditions.
double lasso_kkt_residual(const Vector& target, const Matrix& basis, const Vector& alpha, double lambda);

/// Cyclic coordinate descent with soft thresholding, no intercept. Stops when
/// the KKT residual is at most `tol`; otherwise returns after max_sweeps with
/// converged = false.
LassoResult lasso_fit(const Vector& target, const Matrix& basis, double lambda, double tol = 1e-9,
                      std::size_t max_sweeps = 10000);

using SparseRow = std::vector<std::pair<std::uint32_t, double>>;

struct PruneMap {
  std::size_t n_tokens = 0;
  std::vector<TokenId> base_ids;  // sorted
  double lambda = 0.0;
  std::size_t clusters = 0;
  std::uint64_t seed = 0;
  /// Per token: Lasso weights keyed by base token id (empty for base tokens).
  std::vector<SparseRow> alpha;
  /// Per non-base token whose clipped weights vanish: nearest base token id.
  std::vector<std::optional<TokenId>> fallback;
  /// Per token: mass transfer weights keyed by base position 0..B-1.
  std::vector<SparseRow> remap_rows;

  std::size_t base_size() const { return base_ids.size(); }

  /// Recomputes remap_rows from base_ids, alpha and fallback.
  void derive_remap_rows();

  /// Text format: "B N lambda k seed", base ids line, then one line per
  /// non-base token "o b1:w1 b2:w2 ..." (or "o @b" for a nearest-base fallback).
  void save(const std::filesystem::path& path) const;
  static PruneMap load(const std::filesystem::path& path);
};

struct PruneOptions {
  std::size_t max_vocab = 0;
  double lambda = 0.01;
  double tol = 1e-9;
  std::size_t max_sweeps = 10000;
  std::size_t threads = 1;
};

PruneMap build_prune_map(const EmbeddingMatrix& emb, const ClusterAssignment& assign, const Vocabulary& vocab,
                         const PruneOptions& options);

/// Clip negative weights and renormalize. Returns an empty row when nothing
/// positive remains.
SparseRow clip_and_normalize(const SparseRow& weights);

/// Moves each token's mass onto the base simplex. Output indices are base
/// positions, dim = B.
DocDistribution remap_distribution(const DocDistribution& dist, const PruneMap& map);

}  // namespace wig
