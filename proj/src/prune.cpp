#include "wig/prune.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace wig {

namespace fs = std::filesystem;

namespace {

double squared_distance(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

}  // namespace

ClusterAssignment kmeans(const EmbeddingMatrix& emb, std::size_t k, std::uint64_t seed, std::size_t max_iters) {
  const Matrix& x = emb.data;
  const auto n = static_cast<std::size_t>(x.rows());
  require(k >= 2, "kmeans: k must be >= 2");
  require(k <= n, "kmeans: k = " + std::to_string(k) + " exceeds the number of points " + std::to_string(n));
  require(max_iters >= 1, "kmeans: max_iters must be >= 1");
  require(x.allFinite(), "kmeans: non-finite embedding entries");

  Rng rng(seed);
  ClusterAssignment out;
  out.k = k;
  out.centroids.resize(static_cast<Eigen::Index>(k), x.cols());

  // k-means++ seeding.
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::vector<bool> chosen(n, false);
  std::size_t first = static_cast<std::size_t>(rng.below(n));
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t pick = first;
    if (c > 0) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) total += d2[i];
      if (total > 0.0) {
        double u = rng.uniform() * total;
        pick = n;
        for (std::size_t i = 0; i < n; ++i) {
          if (d2[i] <= 0.0) continue;
          pick = i;
          if (u < d2[i]) break;
          u -= d2[i];
        }
      } else {
        // Every remaining point coincides with a centroid.
        std::vector<std::size_t> free;
        for (std::size_t i = 0; i < n; ++i)
          if (!chosen[i]) free.push_back(i);
        pick = free[static_cast<std::size_t>(rng.below(free.size()))];
      }
    }
    chosen[pick] = true;
    out.centroids.row(static_cast<Eigen::Index>(c)) = x.row(static_cast<Eigen::Index>(pick));
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], squared_distance(x, static_cast<Eigen::Index>(i), out.centroids, static_cast<Eigen::Index>(c)));
  }

  auto& assign = out.assignment;
  assign.assign(n, 0);
  std::vector<double> dist(n, 0.0);
  auto assign_points = [&] {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      // Ties keep the current cluster, so a repaired cluster is not emptied
      // again by duplicate points.
      std::size_t best = assign[i];
      double best_d = squared_distance(x, static_cast<Eigen::Index>(i), out.centroids, static_cast<Eigen::Index>(best));
      for (std::size_t c = 0; c < k; ++c) {
        const double d = squared_distance(x, static_cast<Eigen::Index>(i), out.centroids, static_cast<Eigen::Index>(c));
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (best != assign[i]) changed = true;
      assign[i] = best;
      dist[i] = best_d;
    }
    return changed;
  };
  auto objective = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      s += squared_distance(x, static_cast<Eigen::Index>(i), out.centroids, static_cast<Eigen::Index>(assign[i]));
    return s;
  };
  auto update_centroids = [&] {
    std::vector<std::size_t> counts(k, 0);
    Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(k), x.cols());
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(assign[i])) += x.row(static_cast<Eigen::Index>(i));
      ++counts[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (counts[c] > 0) out.centroids.row(static_cast<Eigen::Index>(c)) = sums.row(static_cast<Eigen::Index>(c)) / static_cast<double>(counts[c]);
    return counts;
  };

  // Reseeds empty clusters with the point farthest from its own centroid.
  auto repair = [&](std::vector<std::size_t> counts) {
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[assign[i]] < 2) continue;
        const double d = squared_distance(x, static_cast<Eigen::Index>(i), out.centroids, static_cast<Eigen::Index>(assign[i]));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far == n) continue;
      --counts[assign[far]];
      assign[far] = c;
      counts[c] = 1;
      counts = update_centroids();
    }
    return counts;
  };

  assign_points();
  out.objective_history.push_back(objective());
  for (std::size_t it = 0; it < max_iters; ++it) {
    repair(update_centroids());
    out.iterations = it + 1;
    const bool changed = assign_points();
    out.objective_history.push_back(objective());
    if (!changed) break;
  }
  repair(update_centroids());
  return out;
}

std::vector<TokenId> select_base(const ClusterAssignment& assign, const Vocabulary& vocab, std::size_t max_vocab) {
  const std::size_t n = assign.assignment.size();
  require(n == vocab.size(), "select_base: assignment and vocabulary sizes differ");
  require(assign.k >= 1, "select_base: empty clustering");
  require(max_vocab >= assign.k, "select_base: max_vocab (" + std::to_string(max_vocab) +
                                     ") must be at least the number of clusters (" + std::to_string(assign.k) + ")");
  if (max_vocab >= n) {
    std::vector<TokenId> all(n);
    std::iota(all.begin(), all.end(), TokenId{0});
    return all;
  }

  auto more_frequent = [&](TokenId a, TokenId b) {
    const auto fa = vocab.frequency(a), fb = vocab.frequency(b);
    return fa != fb ? fa > fb : a < b;
  };
  std::vector<std::vector<TokenId>> members(assign.k);
  for (std::size_t i = 0; i < n; ++i) members.at(assign.assignment[i]).push_back(static_cast<TokenId>(i));

  const std::size_t quota = max_vocab / assign.k;
  std::vector<bool> taken(n, false);
  std::vector<TokenId> base;
  for (auto& m : members) {
    std::sort(m.begin(), m.end(), more_frequent);
    for (std::size_t j = 0; j < std::min(quota, m.size()); ++j) {
      taken[m[j]] = true;
      base.push_back(m[j]);
    }
  }
  std::vector<TokenId> rest;
  for (std::size_t i = 0; i < n; ++i)
    if (!taken[i]) rest.push_back(static_cast<TokenId>(i));
  std::sort(rest.begin(), rest.end(), more_frequent);
  for (std::size_t j = 0; base.size() < max_vocab && j < rest.size(); ++j) base.push_back(rest[j]);
  std::sort(base.begin(), base.end());
  return base;
}

double lasso_objective(const Vector& target, const Matrix& basis, const Vector& alpha, double lambda) {
  const Vector r = target - basis.transpose() * alpha;
  return 0.5 * r.squaredNorm() + lambda * alpha.lpNorm<1>();
}

double lasso_kkt_residual(const Vector& target, const Matrix& basis, const Vector& alpha, double lambda) {
  const Vector grad = basis * (basis.transpose() * alpha - target);
  double worst = 0.0;
  for (Eigen::Index j = 0; j < alpha.size(); ++j) {
    const double v = alpha[j] != 0.0 ? std::abs(grad[j] + lambda * (alpha[j] > 0 ? 1.0 : -1.0))
                                     : std::max(0.0, std::abs(grad[j]) - lambda);
    worst = std::max(worst, v);
  }
  return worst;
}

LassoResult lasso_fit(const Vector& target, const Matrix& basis, double lambda, double tol, std::size_t max_sweeps) {
  require(lambda >= 0.0 && std::isfinite(lambda), "lasso_fit: lambda must be >= 0");
  require(basis.cols() == target.size(), "lasso_fit: basis depth does not match target");
  require(basis.allFinite() && target.allFinite(), "lasso_fit: non-finite input");
  const Eigen::Index p = basis.rows();

  const Matrix gram = basis * basis.transpose();
  const Vector corr = basis * target;
  LassoResult res;
  res.alpha = Vector::Zero(p);
  // grad = gram * alpha - corr, maintained incrementally.
  Vector grad = -corr;

  for (res.sweeps = 0; res.sweeps < max_sweeps;) {
    for (Eigen::Index j = 0; j < p; ++j) {
      const double gjj = gram(j, j);
      const double old = res.alpha[j];
      const double next = gjj > 0.0 ? soft_threshold(gjj * old - grad[j], lambda) / gjj : 0.0;
      if (next != old) {
        grad += gram.col(j) * (next - old);
        res.alpha[j] = next;
      }
    }
    ++res.sweeps;
    res.kkt_residual = lasso_kkt_residual(target, basis, res.alpha, lambda);
    if (res.kkt_residual <= tol) {
      res.converged = true;
      break;
    }
    grad = gram * res.alpha - corr;
  }
  if (!res.converged)
    std::clog << "[wig] lasso_fit: no convergence after " << max_sweeps << " sweeps (KKT residual " << res.kkt_residual << ")\n";
  return res;
}

SparseRow clip_and_normalize(const SparseRow& weights) {
  SparseRow out;
  double total = 0.0;
  for (const auto& [b, w] : weights) {
    if (w > 0.0) {
      out.emplace_back(b, w);
      total += w;
    }
  }
  if (total <= 0.0) return {};
  for (auto& [b, w] : out) w /= total;
  return out;
}

void PruneMap::derive_remap_rows() {
  std::vector<std::int64_t> position(n_tokens, -1);
  for (std::size_t p = 0; p < base_ids.size(); ++p) position.at(base_ids[p]) = static_cast<std::int64_t>(p);
  remap_rows.assign(n_tokens, {});
  alpha.resize(n_tokens);
  fallback.resize(n_tokens);
  for (std::size_t o = 0; o < n_tokens; ++o) {
    if (position[o] >= 0) {
      remap_rows[o] = {{static_cast<std::uint32_t>(position[o]), 1.0}};
      continue;
    }
    SparseRow clipped = clip_and_normalize(alpha[o]);
    if (clipped.empty()) {
      if (!fallback[o]) throw ValidationError("prune map: token " + std::to_string(o) + " has no positive weight and no fallback");
      clipped = {{*fallback[o], 1.0}};
    }
    for (auto& [b, w] : clipped) {
      require(b < n_tokens && position[b] >= 0, "prune map: weight on non-base token " + std::to_string(b));
      b = static_cast<std::uint32_t>(position[b]);
    }
    remap_rows[o] = std::move(clipped);
  }
}

PruneMap build_prune_map(const EmbeddingMatrix& emb, const ClusterAssignment& assign, const Vocabulary& vocab,
                         const PruneOptions& options) {
  const std::size_t n = emb.n_tokens();
  require(n == vocab.size() && assign.assignment.size() == n, "build_prune_map: embeddings, clustering and vocabulary disagree on N");
  PruneMap map;
  map.n_tokens = n;
  map.lambda = options.lambda;
  map.clusters = assign.k;
  map.base_ids = select_base(assign, vocab, options.max_vocab);

  const auto nb = static_cast<Eigen::Index>(map.base_ids.size());
  Matrix basis(nb, emb.data.cols());
  for (Eigen::Index p = 0; p < nb; ++p) basis.row(p) = emb.data.row(map.base_ids[static_cast<std::size_t>(p)]);

  std::vector<bool> is_base(n, false);
  for (TokenId b : map.base_ids) is_base[b] = true;
  std::vector<TokenId> others;
  for (std::size_t o = 0; o < n; ++o)
    if (!is_base[o]) others.push_back(static_cast<TokenId>(o));

  map.alpha.assign(n, {});
  map.fallback.assign(n, std::nullopt);
  parallel_for(others.size(), options.threads, [&](std::size_t idx) {
    const TokenId o = others[idx];
    const Vector target = emb.data.row(o).transpose();
    const LassoResult fit = lasso_fit(target, basis, options.lambda, options.tol, options.max_sweeps);
    SparseRow row;
    bool any_positive = false;
    for (Eigen::Index p = 0; p < nb; ++p) {
      if (fit.alpha[p] == 0.0) continue;
      row.emplace_back(map.base_ids[static_cast<std::size_t>(p)], fit.alpha[p]);
      any_positive = any_positive || fit.alpha[p] > 0.0;
    }
    map.alpha[o] = std::move(row);
    if (!any_positive) {
      Eigen::Index nearest = 0;
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index p = 0; p < nb; ++p) {
        const double d = (basis.row(p) - target.transpose()).squaredNorm();
        if (d < best) {
          best = d;
          nearest = p;
        }
      }
      map.fallback[o] = map.base_ids[static_cast<std::size_t>(nearest)];
    }
  });
  map.derive_remap_rows();
  return map;
}

DocDistribution remap_distribution(const DocDistribution& dist, const PruneMap& map) {
  require(dist.dim == map.n_tokens, "remap_distribution: distribution is not on the full vocabulary simplex");
  std::map<std::uint32_t, double> mass;
  for (const auto& [id, m] : dist.entries) {
    require(id < map.n_tokens, "remap_distribution: token id out of range");
    for (const auto& [p, w] : map.remap_rows[id]) mass[p] += m * w;
  }
  DocDistribution out{dist.doc_id, map.base_size(), {}};
  for (const auto& [p, m] : mass)
    if (m > 0.0) out.entries.emplace_back(p, m);
  return out;
}

void PruneMap::save(const fs::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", lambda);
  out << base_ids.size() << ' ' << n_tokens << ' ' << buf << ' ' << clusters << ' ' << seed << '\n';
  for (std::size_t i = 0; i < base_ids.size(); ++i) out << (i ? " " : "") << base_ids[i];
  out << '\n';
  std::vector<bool> is_base(n_tokens, false);
  for (TokenId b : base_ids) is_base[b] = true;
  for (std::size_t o = 0; o < n_tokens; ++o) {
    if (is_base[o]) continue;
    out << o;
    if (fallback[o]) out << " @" << *fallback[o];
    for (const auto& [b, w] : alpha[o]) {
      std::snprintf(buf, sizeof buf, " %u:%.17g", b, w);
      out << buf;
    }
    out << '\n';
  }
}

PruneMap PruneMap::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string what = path.string();
  PruneMap map;
  std::string line;
  std::size_t b = 0;
  if (!std::getline(in, line)) throw ValidationError(what + ": empty prune map");
  {
    std::istringstream hs(line);
    if (!(hs >> b >> map.n_tokens >> map.lambda >> map.clusters >> map.seed))
      throw ValidationError(what + ": malformed header, expected \"B N lambda k seed\"");
  }
  if (!std::getline(in, line)) throw ValidationError(what + ": missing base id line");
  {
    std::istringstream bs(line);
    TokenId id;
    while (bs >> id) map.base_ids.push_back(id);
  }
  if (map.base_ids.size() != b) throw ValidationError(what + ": header says B=" + std::to_string(b) + " but base line has " + std::to_string(map.base_ids.size()) + " ids");
  if (!std::is_sorted(map.base_ids.begin(), map.base_ids.end()) ||
      std::adjacent_find(map.base_ids.begin(), map.base_ids.end()) != map.base_ids.end())
    throw ValidationError(what + ": base ids must be sorted and distinct");
  for (TokenId id : map.base_ids)
    if (id >= map.n_tokens) throw ValidationError(what + ": base id out of range");

  map.alpha.assign(map.n_tokens, {});
  map.fallback.assign(map.n_tokens, std::nullopt);
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t o;
    if (!(ls >> o) || o >= map.n_tokens) throw ValidationError(what + ": bad token id in row '" + line + "'");
    std::string item;
    while (ls >> item) {
      if (item[0] == '@') {
        map.fallback[o] = static_cast<TokenId>(std::stoul(item.substr(1)));
        continue;
      }
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw ValidationError(what + ": bad weight '" + item + "'");
      map.alpha[o].emplace_back(static_cast<std::uint32_t>(std::stoul(item.substr(0, colon))), std::stod(item.substr(colon + 1)));
    }
    ++rows;
  }
  if (rows + b != map.n_tokens) throw ValidationError(what + ": expected one row per non-base token");
  map.derive_remap_rows();
  return map;
}

}  // namespace wig
