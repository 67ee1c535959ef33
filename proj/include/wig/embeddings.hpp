#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "wig/common.hpp"
#include "wig/corpus.hpp"

namespace wig {

/// Row i is the vector for token id i.
struct EmbeddingMatrix {
  Matrix data;

  std::size_t n_tokens() const { return static_cast<std::size_t>(data.rows()); }
  std::size_t depth() const { return static_cast<std::size_t>(data.cols()); }
};

struct LoadedEmbeddings {
  EmbeddingMatrix matrix;
  std::size_t missing = 0;  // vocabulary tokens filled with the mean vector
};

/// word2vec text format: "N D" header, then "token v1 ... vD" lines.
LoadedEmbeddings load_embeddings(const std::filesystem::path& path, const Vocabulary& vocab);

/// Writes word2vec text with 17 significant digits so load() is bit-exact.
void save_embeddings(const EmbeddingMatrix& emb, const Vocabulary& vocab, const std::filesystem::path& path);

struct SgnsOptions {
  std::size_t depth = 50;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 0;
};

/// Skip-gram with negative sampling. Single-threaded and deterministic for a
/// fixed seed.
EmbeddingMatrix train_sgns(const std::vector<Document>& documents, std::size_t vocab_size,
                           const SgnsOptions& options);

enum class CostMetric { squared_euclidean, cosine };

/// Dense symmetric cost with zero diagonal, scaled so the largest entry is 1.
struct CostMatrix {
  Matrix data;

  std::size_t dim() const { return static_cast<std::size_t>(data.rows()); }

  /// Binary container: magic "WIGC", u32 dim, little-endian f64 row-major.
  void save(const std::filesystem::path& path) const;
  static CostMatrix load(const std::filesystem::path& path);
};

CostMatrix build_cost_matrix(const EmbeddingMatrix& emb, std::span<const TokenId> ids,
                             CostMetric metric = CostMetric::squared_euclidean);

/// All ids 0..N-1.
CostMatrix build_cost_matrix(const EmbeddingMatrix& emb, CostMetric metric = CostMetric::squared_euclidean);

}  // namespace wig
