#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wig/common.hpp"
#include "wig/index.hpp"

namespace wig {

struct ReferenceSeries {
  std::string name;
  std::vector<std::pair<Period, double>> values;

  /// CSV "period,value" with YYYY-MM periods.
  static ReferenceSeries load_csv(const std::filesystem::path& path, std::string name = {});
};

struct AlignedPairs {
  std::vector<Period> periods;
  std::vector<double> index;
  std::vector<double> reference;
};

/// Inner join on period, in period order. Uses the raw index value.
AlignedPairs align(const IndexSeries& a, const ReferenceSeries& b);

double pearson(std::span<const double> x, std::span<const double> y);

/// 1-based ranks; tied values share the average of their positions.
std::vector<double> average_ranks(std::span<const double> x);

double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace wig
