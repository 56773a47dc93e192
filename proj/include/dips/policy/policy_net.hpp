// Score network f(z_hat * y; phi): M -> 128 -> 128 -> M with ReLU and dropout.
//
// The output layer is stored item-major (w3 is M x H) so the scores of a few
// candidate items can be computed from gathered rows instead of all M.
#pragma once

#include "dips/ad/ops.hpp"
#include "dips/common/params_io.hpp"
#include "dips/policy/sketch.hpp"
#include "dips/rec/model.hpp"

#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dips::policy {

using ad::Tensor;

struct PolicyParams {
  Index num_items = 0;
  Index hidden = 128;
  double dropout = 0.10;
  Tensor w1;  // M x H
  Tensor b1;  // 1 x H
  Tensor w2;  // H x H
  Tensor b2;  // 1 x H
  Tensor w3;  // M x H (transposed output layer)
  Tensor b3;  // 1 x M

  static PolicyParams init(Index num_items, std::uint64_t seed, Index hidden = 128,
                           double dropout = 0.10);
  std::vector<Tensor> all() const;
  std::vector<std::pair<std::string, Tensor>> named() const;
  PolicyParams clone() const;

  ParamFile to_param_file() const;
  static PolicyParams from_param_file(const ParamFile& file);
};

// Dropout masks for the two hidden layers of one forward pass.
struct DropoutMasks {
  Matrix h1;
  Matrix h2;

  static DropoutMasks sample(const PolicyParams& phi, std::mt19937_64& rng);
};

// Dense forward over all M outputs for a 1 x M input.
Tensor policy_forward(const PolicyParams& phi, const Tensor& input,
                      const DropoutMasks* masks = nullptr);

// f(z_hat * y; phi) + log z_hat over all M items: items outside the
// intermediate sketch get -inf.
Tensor policy_scores(const IntermediateSketch& inter, const rec::RatingVector& y,
                     const PolicyParams& phi, const DropoutMasks* masks = nullptr);

// The same scores restricted to the sketch's own items, in entry order (1 x C).
// Only the inputs and outputs that can be nonzero are touched.
Tensor candidate_scores(const IntermediateSketch& inter, const PolicyParams& phi,
                        const DropoutMasks* masks = nullptr);

// Column layout of batched_candidate_scores.
struct CandidateBatch {
  std::vector<Index> items;                 // union of all rows' items, ascending
  std::vector<std::vector<Index>> columns;  // per row, the column of each entry
};

// Candidate scores of several intermediate sketches in one pass: E x U over
// the union U of their items, -inf where an item is not in that row's
// sketch. `masks`, if given, holds E x H dropout masks (one row per sketch).
Tensor batched_candidate_scores(std::span<const IntermediateSketch* const> inters,
                                const PolicyParams& phi, const DropoutMasks* masks,
                                CandidateBatch* layout);

}  // namespace dips::policy
