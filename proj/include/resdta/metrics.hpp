// Copyright 2026 The ResDTA Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "resdta/error.hpp"

namespace resdta {

namespace detail {

inline void check_same_length(std::size_t a, std::size_t b, std::size_t min_len, const char* what) {
  if (a != b) {
    throw Error(ErrorKind::kLengthMismatch,
                std::string(what) + ": lengths " + std::to_string(a) + " and " + std::to_string(b));
  }
  if (a < min_len) {
    throw Error(ErrorKind::kEmptyInput, std::string(what) + ": needs at least " + std::to_string(min_len) + " values");
  }
}

/// Fenwick tree over prediction ranks.
class RankCounter {
 public:
  explicit RankCounter(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t rank) {
    for (std::size_t i = rank + 1; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  /// Number of inserted ranks strictly below `rank`.
  std::uint64_t below(std::size_t rank) const {
    std::uint64_t total = 0;
    for (std::size_t i = rank; i > 0; i -= i & (~i + 1)) total += tree_[i];
    return total;
  }

 private:
  std::vector<std::uint64_t> tree_;
};

}  // namespace detail

/// Fraction of pairs with actual_i > actual_j whose predictions are ordered
/// the same way, counting tied predictions as one half. Pairs with equal
/// actual values are not comparable. O(n log n).
inline double concordance_index(std::span<const double> actual, std::span<const double> predicted) {
  detail::check_same_length(actual.size(), predicted.size(), 2, "concordance_index");
  const std::size_t n = actual.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(actual[i]) || !std::isfinite(predicted[i])) {
      throw Error(ErrorKind::kInvalidArgument, "concordance_index: non-finite value");
    }
  }

  // Dense ranks of the predictions; equal predictions share a rank.
  std::vector<std::size_t> by_pred(n);
  std::iota(by_pred.begin(), by_pred.end(), std::size_t{0});
  std::sort(by_pred.begin(), by_pred.end(), [&](std::size_t a, std::size_t b) { return predicted[a] < predicted[b]; });
  std::vector<std::size_t> rank(n);
  std::size_t next_rank = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (k > 0 && predicted[by_pred[k]] != predicted[by_pred[k - 1]]) ++next_rank;
    rank[by_pred[k]] = next_rank;
  }

  std::vector<std::size_t> by_actual(n);
  std::iota(by_actual.begin(), by_actual.end(), std::size_t{0});
  std::sort(by_actual.begin(), by_actual.end(), [&](std::size_t a, std::size_t b) { return actual[a] < actual[b]; });

  // Each element of a group of equal actual values is compared against every
  // element already inserted (all strictly smaller actual values).
  detail::RankCounter counter(next_rank + 1);
  std::uint64_t twice_concordant = 0;
  std::uint64_t comparable = 0;
  std::size_t inserted = 0;
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start;
    while (end < n && actual[by_actual[end]] == actual[by_actual[start]]) ++end;
    for (std::size_t k = start; k < end; ++k) {
      const std::size_t r = rank[by_actual[k]];
      const std::uint64_t lower = counter.below(r);
      const std::uint64_t equal = counter.below(r + 1) - lower;
      twice_concordant += 2 * lower + equal;
      comparable += inserted;
    }
    for (std::size_t k = start; k < end; ++k) counter.add(rank[by_actual[k]]);
    inserted += end - start;
    start = end;
  }
  if (comparable == 0) throw Error(ErrorKind::kNoComparablePairs, "all actual values are equal");
  return static_cast<double>(twice_concordant) / (2.0 * static_cast<double>(comparable));
}

/// (1/n) sum (predicted - actual)^2
inline double mse(std::span<const double> actual, std::span<const double> predicted) {
  detail::check_same_length(actual.size(), predicted.size(), 1, "mse");
  double total = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double d = predicted[i] - actual[i];
    total += d * d;
  }
  return total / static_cast<double>(actual.size());
}

struct RSquared {
  double r2 = 0.0;         // squared Pearson correlation
  double r2_origin = 0.0;  // coefficient of determination of the fit y = k p
};

/// r2 and the through-origin r0^2 = 1 - sum (y - k p)^2 / sum (y - mean y)^2
/// with k = sum(y p) / sum(p^2).
inline RSquared r_squared_pair(std::span<const double> actual, std::span<const double> predicted) {
  detail::check_same_length(actual.size(), predicted.size(), 3, "r_squared_pair");
  const double n = static_cast<double>(actual.size());
  const double mean_y = std::accumulate(actual.begin(), actual.end(), 0.0) / n;
  const double mean_p = std::accumulate(predicted.begin(), predicted.end(), 0.0) / n;
  double syy = 0.0, spp = 0.0, syp = 0.0, yp = 0.0, pp = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double dy = actual[i] - mean_y;
    const double dp = predicted[i] - mean_p;
    syy += dy * dy;
    spp += dp * dp;
    syp += dy * dp;
    yp += actual[i] * predicted[i];
    pp += predicted[i] * predicted[i];
  }
  if (syy == 0.0) throw Error(ErrorKind::kDegenerateInput, "actual values are constant");
  if (spp == 0.0) throw Error(ErrorKind::kDegenerateInput, "predicted values are constant");
  if (pp == 0.0) throw Error(ErrorKind::kDegenerateInput, "predicted values are all zero");

  RSquared out;
  out.r2 = (syp * syp) / (syy * spp);
  const double k = yp / pp;
  double residual = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double e = actual[i] - k * predicted[i];
    residual += e * e;
  }
  out.r2_origin = 1.0 - residual / syy;
  return out;
}

/// r^2 * (1 - sqrt(|r^2 - r0^2|)); models with rm2 > 0.5 are conventionally
/// considered acceptable.
inline double rm2(std::span<const double> actual, std::span<const double> predicted) {
  const RSquared r = r_squared_pair(actual, predicted);
  return r.r2 * (1.0 - std::sqrt(std::abs(r.r2 - r.r2_origin)));
}

inline constexpr double kRm2AcceptanceThreshold = 0.5;

struct FoldMetrics {
  double ci = 0.0;
  double mse = 0.0;
  double rm2 = 0.0;

  bool operator==(const FoldMetrics&) const = default;
};

inline FoldMetrics evaluate_metrics(std::span<const double> actual, std::span<const double> predicted) {
  return {concordance_index(actual, predicted), mse(actual, predicted), rm2(actual, predicted)};
}

struct MetricsReport {
  std::vector<FoldMetrics> per_fold;
  FoldMetrics mean;
  FoldMetrics std;  // population standard deviation
  std::size_t n_folds = 0;
};

inline MetricsReport aggregate(std::span<const FoldMetrics> folds) {
  if (folds.empty()) throw Error(ErrorKind::kEmptyInput, "aggregate needs at least one fold");
  MetricsReport report;
  report.per_fold.assign(folds.begin(), folds.end());
  report.n_folds = folds.size();
  const double n = static_cast<double>(folds.size());
  auto stat = [&](double FoldMetrics::*field, double& mean, double& sd) {
    double sum = 0.0;
    for (const auto& f : folds) sum += f.*field;
    mean = sum / n;
    double var = 0.0;
    for (const auto& f : folds) var += (f.*field - mean) * (f.*field - mean);
    sd = std::sqrt(var / n);
  };
  stat(&FoldMetrics::ci, report.mean.ci, report.std.ci);
  stat(&FoldMetrics::mse, report.mean.mse, report.std.mse);
  stat(&FoldMetrics::rm2, report.mean.rm2, report.std.rm2);
  return report;
}

inline void to_json(nlohmann::json& j, const FoldMetrics& m) {
  j = nlohmann::json{{"ci", m.ci}, {"mse", m.mse}, {"rm2", m.rm2}};
}

/// {"folds": [...], "mean": {ci, mse, rm2}, "std": {...}, "n_folds": n}
inline void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = nlohmann::json{{"folds", r.per_fold}, {"mean", r.mean}, {"std", r.std}, {"n_folds", r.n_folds}};
}

}  // namespace resdta
