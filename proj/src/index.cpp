#include "wig/index.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace wig {

namespace fs = std::filesystem;

std::pair<Vector, Matrix> jacobi_eigen(const Matrix& symmetric, double tol, std::size_t max_sweeps) {
  require(symmetric.rows() == symmetric.cols(), "jacobi_eigen: matrix must be square");
  const Eigen::Index n = symmetric.rows();
  Matrix a = symmetric;
  Matrix v = Matrix::Identity(n, n);
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) <= tol * std::max(1.0, a.norm())) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) { return a(x, x) > a(y, y); });
  Vector values(n);
  Matrix vectors(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    values[i] = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
    vectors.col(i) = v.col(order[static_cast<std::size_t>(i)]);
  }
  return {values, vectors};
}

TopicScores svd_reduce(const Matrix& topics, const PowerIterationOptions& options) {
  require(topics.cols() >= 1 && topics.rows() >= 1, "svd_reduce: empty topic matrix");
  require(topics.allFinite(), "svd_reduce: non-finite topic matrix");
  const Eigen::Index k = topics.cols();
  const Matrix gram = topics.transpose() * topics;

  Vector v = options.start ? *options.start : Vector::Ones(k);
  require(v.size() == k && v.norm() > 0.0, "svd_reduce: bad starting vector");
  v.normalize();
  bool converged = false;
  for (std::size_t it = 0; it < options.max_iters; ++it) {
    Vector w = gram * v;
    const double nw = w.norm();
    if (nw == 0.0) break;
    w /= nw;
    if (w.dot(v) < 0.0) w = -w;
    const double delta = (w - v).norm();
    v = w;
    if (delta <= options.tol) {
      converged = true;
      break;
    }
  }

  TopicScores out;
  if (!converged) {
    std::clog << "[wig] svd_reduce: power iteration did not converge, using Jacobi eigensolve\n";
    auto [values, vectors] = jacobi_eigen(gram);
    v = vectors.col(0);
    out.used_jacobi_fallback = true;
  }
  out.sigma = std::sqrt(std::max(0.0, v.dot(gram * v)));
  out.scores = out.sigma * v;
  if (out.scores.sum() < 0.0) {
    out.scores = -out.scores;
    out.sign_flipped = true;
  }
  return out;
}

Vector score_documents(const TopicScores& scores, const Matrix& weights) {
  require(weights.rows() == scores.scores.size(), "score_documents: weight matrix has " + std::to_string(weights.rows()) +
                                                      " rows, expected one per topic (" + std::to_string(scores.scores.size()) + ")");
  return weights.transpose() * scores.scores;
}

IndexSeries aggregate(std::span<const double> doc_scores, std::span<const Date> dates, Aggregation mode) {
  require(!doc_scores.empty(), "aggregate: no documents");
  require(doc_scores.size() == dates.size(), "aggregate: scores and dates differ in length");
  std::map<Period, std::pair<double, std::size_t>> buckets;
  for (std::size_t i = 0; i < doc_scores.size(); ++i) {
    require(std::isfinite(doc_scores[i]), "aggregate: non-finite document score");
    auto& [sum, count] = buckets[Period::of(dates[i])];
    sum += doc_scores[i];
    ++count;
  }
  IndexSeries series;
  const Period last = buckets.rbegin()->first;
  for (Period p = buckets.begin()->first; p <= last; p = p.next()) {
    IndexPoint pt{p, 0.0, std::nullopt, true};
    if (auto it = buckets.find(p); it != buckets.end()) {
      pt.empty = false;
      pt.raw = mode == Aggregation::sum ? it->second.first : it->second.first / static_cast<double>(it->second.second);
    }
    series.points.push_back(pt);
  }

  const double n = static_cast<double>(series.points.size());
  double mean = 0.0;
  for (const auto& p : series.points) mean += p.raw;
  mean /= n;
  double var = 0.0;
  for (const auto& p : series.points) var += (p.raw - mean) * (p.raw - mean);
  var /= n;
  if (series.points.size() < 2 || var <= 0.0) {
    std::clog << "[wig] aggregate: standardized index undefined (" << series.points.size()
              << " month(s), variance " << var << "); emitting raw scores only\n";
    return series;
  }
  const double sd = std::sqrt(var);
  for (auto& p : series.points) p.standardized = (p.raw - mean) / sd;
  return series;
}

void IndexSeries::save_csv(const fs::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "period,raw,standardized\n";
  char buf[64];
  for (const auto& p : points) {
    out << p.period.key();
    std::snprintf(buf, sizeof buf, ",%.17g,", p.raw);
    out << buf;
    if (p.standardized) {
      std::snprintf(buf, sizeof buf, "%.17g", *p.standardized);
      out << buf;
    }
    out << '\n';
  }
}

IndexSeries IndexSeries::load_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  auto rows = parse_csv(ss.str());
  if (rows.empty() || rows[0] != std::vector<std::string>{"period", "raw", "standardized"})
    throw ValidationError(path.string() + ": expected header period,raw,standardized");
  IndexSeries s;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != 3) throw ValidationError(path.string() + ": row " + std::to_string(r) + " needs 3 fields");
    auto p = parse_period(row[0]);
    if (!p) throw ValidationError(path.string() + ": bad period '" + row[0] + "'");
    IndexPoint pt{*p, std::stod(row[1]), std::nullopt, false};
    if (!row[2].empty()) pt.standardized = std::stod(row[2]);
    if (!s.points.empty() && !(s.points.back().period < pt.period))
      throw ValidationError(path.string() + ": periods must be strictly increasing");
    s.points.push_back(pt);
  }
  return s;
}

}  // namespace wig
