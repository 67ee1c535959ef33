#include "wig/embeddings.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "wig/binary_io.hpp"

namespace wig {

namespace fs = std::filesystem;

LoadedEmbeddings load_embeddings(const fs::path& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embeddings " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty embeddings file");
  std::istringstream header(line);
  long long n = -1, d = -1;
  std::string extra;
  if (!(header >> n >> d) || (header >> extra) || n < 0 || d < 1)
    throw ValidationError(path.string() + ": malformed header, expected \"N D\"");

  const auto depth = static_cast<Eigen::Index>(d);
  Matrix data = Matrix::Zero(static_cast<Eigen::Index>(vocab.size()), depth);
  std::vector<bool> present(vocab.size(), false);
  std::size_t lineno = 1;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    std::vector<double> values;
    std::string v;
    while (ls >> v) {
      double x = 0.0;
      auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
      if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(x))
        throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": bad value '" + v + "'");
      values.push_back(x);
    }
    if (static_cast<long long>(values.size()) != d)
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": depth mismatch, header says " +
                            std::to_string(d) + " but line has " + std::to_string(values.size()));
    ++rows;
    auto id = vocab.find(token);
    if (!id) continue;
    present[*id] = true;
    for (Eigen::Index j = 0; j < depth; ++j) data(*id, j) = values[static_cast<std::size_t>(j)];
  }
  if (static_cast<long long>(rows) != n)
    std::clog << "[wig] " << path.string() << ": header announces " << n << " vectors, found " << rows << "\n";

  const auto hits = static_cast<std::size_t>(std::count(present.begin(), present.end(), true));
  if (hits == 0) throw ValidationError(path.string() + ": no vocabulary token has an embedding");

  Vector mean = Vector::Zero(depth);
  for (std::size_t i = 0; i < present.size(); ++i)
    if (present[i]) mean += data.row(static_cast<Eigen::Index>(i)).transpose();
  mean /= static_cast<double>(hits);

  LoadedEmbeddings out;
  for (std::size_t i = 0; i < present.size(); ++i) {
    if (present[i]) continue;
    data.row(static_cast<Eigen::Index>(i)) = mean.transpose();
    ++out.missing;
  }
  if (out.missing > 0) std::clog << "[wig] " << out.missing << " vocabulary tokens missing from embeddings, using mean vector\n";
  out.matrix.data = std::move(data);
  return out;
}

void save_embeddings(const EmbeddingMatrix& emb, const Vocabulary& vocab, const fs::path& path) {
  require(emb.n_tokens() == vocab.size(), "save_embeddings: row count does not match vocabulary");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << emb.n_tokens() << ' ' << emb.depth() << '\n';
  char buf[40];
  for (std::size_t i = 0; i < emb.n_tokens(); ++i) {
    out << vocab.token(static_cast<TokenId>(i));
    for (std::size_t j = 0; j < emb.depth(); ++j) {
      std::snprintf(buf, sizeof buf, " %.17g", emb.data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      out << buf;
    }
    out << '\n';
  }
}

namespace {

double sigmoid(double x) {
  if (x > 30) return 1.0;
  if (x < -30) return 0.0;
  return 1.0 / (1.0 + std::exp(-x));
}

}  // namespace

EmbeddingMatrix train_sgns(const std::vector<Document>& documents, std::size_t vocab_size,
                           const SgnsOptions& options) {
  require(options.depth >= 2, "train_sgns: depth must be >= 2");
  require(documents.size() >= 2, "train_sgns: corpus too small (need at least 2 documents)");
  require(vocab_size >= 2, "train_sgns: vocabulary too small");
  require(options.window >= 1 && options.epochs >= 1, "train_sgns: window and epochs must be >= 1");

  const auto n = static_cast<Eigen::Index>(vocab_size);
  const auto d = static_cast<Eigen::Index>(options.depth);
  Rng rng(options.seed);

  // Noise distribution: unigram counts raised to 0.75.
  std::vector<double> counts(vocab_size, 0.0);
  std::size_t total_tokens = 0;
  for (const auto& doc : documents) {
    for (TokenId t : doc.tokens) {
      require(t < vocab_size, "train_sgns: token id out of range");
      counts[t] += 1.0;
    }
    total_tokens += doc.tokens.size();
  }
  std::vector<double> cdf(vocab_size);
  double acc = 0.0;
  for (std::size_t i = 0; i < vocab_size; ++i) {
    acc += std::pow(counts[i], 0.75);
    cdf[i] = acc;
  }
  auto draw_negative = [&] {
    const double u = rng.uniform() * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    return static_cast<TokenId>(std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), vocab_size - 1));
  };

  // Row-major storage so each token vector is contiguous.
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMatrix input(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) input(i, j) = (rng.uniform() - 0.5) / static_cast<double>(d);
  RowMatrix output = RowMatrix::Zero(n, d);

  const double total_steps = static_cast<double>(options.epochs * total_tokens);
  double step = 0.0;
  Eigen::RowVectorXd grad(d);
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    for (const auto& doc : documents) {
      const auto len = doc.tokens.size();
      for (std::size_t pos = 0; pos < len; ++pos, step += 1.0) {
        const double lr = std::max(options.learning_rate * (1.0 - step / total_steps), options.learning_rate * 1e-4);
        const TokenId center = doc.tokens[pos];
        const std::size_t lo = pos >= options.window ? pos - options.window : 0;
        const std::size_t hi = std::min(len, pos + options.window + 1);
        for (std::size_t c = lo; c < hi; ++c) {
          if (c == pos) continue;
          const TokenId context = doc.tokens[c];
          grad.setZero();
          for (std::size_t s = 0; s <= options.negatives; ++s) {
            TokenId target = context;
            double label = 1.0;
            if (s > 0) {
              target = draw_negative();
              if (target == context) continue;
              label = 0.0;
            }
            const double score = input.row(center).dot(output.row(target));
            const double g = lr * (label - sigmoid(score));
            grad += g * output.row(target);
            output.row(target) += g * input.row(center);
          }
          input.row(center) += grad;
        }
      }
    }
  }

  EmbeddingMatrix emb;
  emb.data = input;
  for (Eigen::Index i = 0; i < n; ++i) {
    // A token that never appeared keeps its random init, which is never exactly zero.
    if (!input.row(i).allFinite()) throw NumericalError("train_sgns: non-finite embedding");
  }
  return emb;
}

void CostMatrix::save(const fs::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  binary::write_magic(out, "WIGC");
  binary::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(dim()));
  binary::write_matrix(out, data);
}

CostMatrix CostMatrix::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string what = path.string();
  binary::expect_magic(in, "WIGC", what);
  const auto dim = binary::read_pod<std::uint32_t>(in, what);
  CostMatrix c;
  c.data = binary::read_matrix(in, dim, dim, what);
  if (in.peek() != std::char_traits<char>::eof()) throw ValidationError(what + ": trailing bytes after cost matrix");
  return c;
}

CostMatrix build_cost_matrix(const EmbeddingMatrix& emb, std::span<const TokenId> ids, CostMetric metric) {
  require(ids.size() >= 2, "build_cost_matrix: need at least 2 ids");
  std::unordered_set<TokenId> seen;
  for (TokenId id : ids) {
    require(id < emb.n_tokens(), "build_cost_matrix: id " + std::to_string(id) + " out of range");
    require(seen.insert(id).second, "build_cost_matrix: duplicate id " + std::to_string(id));
  }
  require(emb.data.allFinite(), "build_cost_matrix: non-finite embedding entries");

  const auto n = static_cast<Eigen::Index>(ids.size());
  Matrix c = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto xi = emb.data.row(ids[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const auto xj = emb.data.row(ids[static_cast<std::size_t>(j)]);
      double v = 0.0;
      if (metric == CostMetric::squared_euclidean) {
        v = (xi - xj).squaredNorm();
      } else {
        const double denom = xi.norm() * xj.norm();
        require(denom > 0.0, "build_cost_matrix: cosine cost needs non-zero vectors");
        v = std::max(0.0, 1.0 - xi.dot(xj) / denom);
      }
      c(i, j) = v;
      c(j, i) = v;
    }
  }
  const double max_entry = c.maxCoeff();
  require(max_entry > 0.0, "build_cost_matrix: all vectors identical, cost matrix is zero");
  c /= max_entry;
  return CostMatrix{std::move(c)};
}

CostMatrix build_cost_matrix(const EmbeddingMatrix& emb, CostMetric metric) {
  std::vector<TokenId> ids(emb.n_tokens());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<TokenId>(i);
  return build_cost_matrix(emb, ids, metric);
}

}  // namespace wig
