#include "dips/metrics/metrics.hpp"

#include "dips/common/error.hpp"

#include <fmt/format.h>

#include <cmath>

namespace dips::metrics {

double rmse(std::span<const std::pair<double, double>> pairs) {
  if (pairs.empty()) throw InvalidArgument("rmse: no predictions");
  double s = 0.0;
  for (const auto& [truth, pred] : pairs) s += (truth - pred) * (truth - pred);
  return std::sqrt(s / static_cast<double>(pairs.size()));
}

Index rank_of(Index target, std::span<const double> scores, std::span<const std::uint8_t> excluded) {
  const Index m = static_cast<Index>(scores.size());
  if (target < 0 || target >= m) {
    throw InvalidArgument(fmt::format("rank_of: target {} out of range [0, {})", target, m));
  }
  if (!excluded.empty() && static_cast<Index>(excluded.size()) != m) {
    throw InvalidArgument("rank_of: exclusion mask has the wrong length");
  }
  const double s = scores[target];
  if (std::isnan(s)) throw NumericalError("rank_of: target score is NaN");
  Index rank = 1;
  for (Index j = 0; j < m; ++j) {
    if (j == target || (!excluded.empty() && excluded[j])) continue;
    if (scores[j] >= s || std::isnan(scores[j])) ++rank;
  }
  return rank;
}

double recall_at_k(std::span<const Index> ranks, Index k) {
  if (ranks.empty()) throw InvalidArgument("recall_at_k: no ranks");
  Index hits = 0;
  for (Index r : ranks) hits += r <= k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double mrr_at_k(std::span<const Index> ranks, Index k) {
  if (ranks.empty()) throw InvalidArgument("mrr_at_k: no ranks");
  double s = 0.0;
  for (Index r : ranks) s += r <= k ? 1.0 / static_cast<double>(r) : 0.0;
  return s / static_cast<double>(ranks.size());
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  out.n = static_cast<Index>(values.size());
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(out.n);
  if (out.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(out.n - 1));
  }
  return out;
}

}  // namespace dips::metrics
