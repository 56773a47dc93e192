// Discrete selection heads of the learned policy and the straight-through
// surrogates used to differentiate through them.
#pragma once

#include "dips/ad/tensor.hpp"
#include "dips/policy/topk.hpp"

#include <random>
#include <span>
#include <string>
#include <vector>

namespace dips::policy {

using ad::Index;
using ad::Matrix;
using ad::Tensor;

enum class SelectMode { deterministic, stochastic };

SelectMode parse_select_mode(const std::string& s);
std::string to_string(SelectMode m);

// Position of the entry to remove: argmax (first on ties) or a draw from
// softmax(scores). Entries with score -inf are never chosen.
Index online_remove(std::span<const double> scores, SelectMode mode, std::mt19937_64& rng);

// Positions of the K entries to keep, sorted ascending. Deterministic keeps
// the K largest u (earlier position on ties); stochastic samples without
// replacement with probability proportional to u.
std::vector<Index> batch_keep(std::span<const double> u, Index k, SelectMode mode,
                              std::mt19937_64& rng);

// Forward value `w`, backward passes the incoming gradient to `p` unchanged.
Tensor straight_through(const Tensor& p, const Matrix& w);

// Linearized next-step objective sum_c v_c z_c through one selection, where
// z is the candidates' post-selection indicator.
//   removal head:  z = 1 - ST(w, softmax(f))
//   Top-K head:    z = ST(w, topk(f))
// `scores` and `v` are 1 x C rows over the candidates, `w` the chosen 0/1 row
// (removed entry for the removal head, kept entries for Top-K).
Tensor removal_surrogate(const Tensor& scores, const Matrix& w, const Matrix& v);
Tensor keep_surrogate(const Tensor& scores, Index k, const Matrix& w, const Matrix& v,
                      const TopKVjp& vjp = {});

}  // namespace dips::policy
