// Rating and ranking metrics.
#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace dips::metrics {

using Index = std::int64_t;

double rmse(std::span<const std::pair<double, double>> pairs);

// 1-based rank of `target` among all scores; items with an equal score are
// ranked ahead of it. Items flagged in `excluded` (if non-empty) are left out
// of the pool, the target itself never is.
Index rank_of(Index target, std::span<const double> scores,
              std::span<const std::uint8_t> excluded = {});

double recall_at_k(std::span<const Index> ranks, Index k = 20);
double mrr_at_k(std::span<const Index> ranks, Index k = 20);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  Index n = 0;
};

MeanStd mean_std(std::span<const double> values);

}  // namespace dips::metrics
