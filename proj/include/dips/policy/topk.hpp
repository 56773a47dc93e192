// Top-K projection: u_i = sigmoid(f_i + nu) with nu chosen so that sum(u) = K.
// Items with score -inf are masked and get u = 0 exactly.
#pragma once

#include "dips/ad/tensor.hpp"

#include <functional>
#include <span>
#include <vector>

namespace dips::policy {

using ad::Index;

struct TopKResult {
  std::vector<double> u;
  double nu = 0.0;
  int iterations = 0;
};

inline constexpr double kTopKSumTolerance = 1e-8;

TopKResult topk_project(std::span<const double> f, Index k);

// v^T (du/df) without materializing the Jacobian:
//   (v^T J)_j = v_j s_j - s_j (sum_i v_i s_i) / S,  s = u (1 - u),  S = sum s.
std::vector<double> topk_vjp(std::span<const double> u, std::span<const double> v);

using TopKVjp = std::function<std::vector<double>(std::span<const double>, std::span<const double>)>;

// Differentiable Top-K projection of a 1 x C score row. The backward pass
// calls `vjp`, which defaults to topk_vjp; gradient checks substitute it to
// confirm that a broken rule is caught.
ad::Tensor topk(const ad::Tensor& f, Index k, TopKVjp vjp = {});

}  // namespace dips::policy
