#include "dips/policy/selection.hpp"

#include "dips/ad/ops.hpp"
#include "dips/common/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dips::policy {

SelectMode parse_select_mode(const std::string& s) {
  if (s == "deterministic") return SelectMode::deterministic;
  if (s == "stochastic") return SelectMode::stochastic;
  throw ConfigError(fmt::format("unknown selection mode '{}'", s));
}

std::string to_string(SelectMode m) {
  return m == SelectMode::deterministic ? "deterministic" : "stochastic";
}

Index online_remove(std::span<const double> scores, SelectMode mode, std::mt19937_64& rng) {
  Index best = -1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) throw NumericalError("online_remove: NaN score");
    if (!std::isfinite(scores[i])) continue;
    if (best < 0 || scores[i] > scores[best]) best = static_cast<Index>(i);
  }
  if (best < 0) throw InvalidArgument("online_remove: no finite score to choose from");
  if (mode == SelectMode::deterministic) return best;

  const double top = scores[best];
  std::vector<double> p(scores.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isfinite(scores[i])) p[i] = std::exp(scores[i] - top);
    total += p[i];
  }
  std::uniform_real_distribution<double> unit(0.0, total);
  double r = unit(rng);
  Index last = best;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0) continue;
    last = static_cast<Index>(i);
    if (r < p[i]) return last;
    r -= p[i];
  }
  return last;
}

std::vector<Index> batch_keep(std::span<const double> u, Index k, SelectMode mode,
                              std::mt19937_64& rng) {
  const Index n = static_cast<Index>(u.size());
  Index candidates = 0;
  for (double x : u) {
    if (std::isnan(x) || x < 0) throw NumericalError("batch_keep: invalid weight");
    if (x > 0) ++candidates;
  }
  if (k < 1 || candidates < k) {
    throw InvalidArgument(
        fmt::format("batch_keep: need {} candidates with positive weight, have {}", k, candidates));
  }
  std::vector<Index> kept;
  if (mode == SelectMode::deterministic) {
    std::vector<Index> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return u[a] > u[b]; });
    kept.assign(order.begin(), order.begin() + k);
  } else {
    std::vector<double> w(u.begin(), u.end());
    for (Index round = 0; round < k; ++round) {
      double total = 0.0;
      for (double x : w) total += x;
      std::uniform_real_distribution<double> unit(0.0, total);
      double r = unit(rng);
      Index pick = -1;
      for (Index i = 0; i < n; ++i) {
        if (w[i] <= 0) continue;
        pick = i;
        if (r < w[i]) break;
        r -= w[i];
      }
      kept.push_back(pick);
      w[pick] = 0.0;
    }
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

Tensor straight_through(const Tensor& p, const Matrix& w) {
  if (p.rows() != w.rows() || p.cols() != w.cols()) {
    throw InvalidArgument(fmt::format("straight_through: probabilities {} and sample [{}x{}]",
                                      p.shape_str(), w.rows(), w.cols()));
  }
  return ad::make_op_result(Matrix(w), "straight_through", {p},
                            [](const Tensor&, const Tensor& g, std::span<const bool>) {
                              return std::vector<Tensor>{g};
                            });
}

Tensor removal_surrogate(const Tensor& scores, const Matrix& w, const Matrix& v) {
  Tensor removed = straight_through(ad::softmax(scores), w);
  Tensor z = ad::sub(Tensor::ones(1, scores.cols()), removed);
  return ad::sum(ad::mul(Tensor(v), z));
}

Tensor keep_surrogate(const Tensor& scores, Index k, const Matrix& w, const Matrix& v,
                      const TopKVjp& vjp) {
  Tensor z = straight_through(topk(scores, k, vjp), w);
  return ad::sum(ad::mul(Tensor(v), z));
}

}  // namespace dips::policy
