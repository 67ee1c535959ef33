#include "wig/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace wig {

ReferenceSeries ReferenceSeries::load_csv(const std::filesystem::path& path, std::string name) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  auto rows = parse_csv(ss.str());
  if (rows.empty() || rows[0].size() != 2 || rows[0][0] != "period" || rows[0][1] != "value")
    throw ValidationError(path.string() + ": expected header period,value");
  ReferenceSeries s;
  s.name = name.empty() ? path.stem().string() : std::move(name);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != 2) throw ValidationError(path.string() + ": row " + std::to_string(r) + " needs 2 fields");
    auto p = parse_period(row[0]);
    if (!p) throw ValidationError(path.string() + ": bad period '" + row[0] + "'");
    const double v = std::stod(row[1]);
    if (!std::isfinite(v)) throw ValidationError(path.string() + ": non-finite value in row " + std::to_string(r));
    if (!s.values.empty() && !(s.values.back().first < *p))
      throw ValidationError(path.string() + ": periods must be strictly increasing");
    s.values.emplace_back(*p, v);
  }
  return s;
}

AlignedPairs align(const IndexSeries& a, const ReferenceSeries& b) {
  AlignedPairs out;
  std::size_t i = 0, j = 0;
  while (i < a.points.size() && j < b.values.size()) {
    const Period pa = a.points[i].period;
    const Period pb = b.values[j].first;
    if (pa < pb) {
      ++i;
    } else if (pb < pa) {
      ++j;
    } else {
      out.periods.push_back(pa);
      out.index.push_back(a.points[i].raw);
      out.reference.push_back(b.values[j].second);
      ++i;
      ++j;
    }
  }
  if (out.periods.size() < 3)
    throw ValidationError("align: index and '" + b.name + "' overlap in " + std::to_string(out.periods.size()) +
                          " periods, need at least 3");
  return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), "pearson: length mismatch");
  require(x.size() >= 3, "pearson: need at least 3 points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) throw ValidationError("pearson: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), "spearman: length mismatch");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  try {
    return pearson(rx, ry);
  } catch (const ValidationError&) {
    throw ValidationError("spearman: zero rank variance");
  }
}

}  // namespace wig
