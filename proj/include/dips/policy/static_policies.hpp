// Baseline sketch policies: reservoir sampling, hardest-example retention and
// influence-based retention.
#pragma once

#include "dips/policy/sketch.hpp"
#include "dips/rec/model.hpp"

#include <random>
#include <vector>

namespace dips::policy {

struct ReservoirOutcome {
  bool inserted = false;
  Index evicted = -1;  // item replaced by the incoming one, or -1
};

// Algorithm R. `t` is the 1-based count of items streamed so far, including
// the incoming one.
ReservoirOutcome reservoir_update(Sketch& sketch, const SketchEntry& incoming, Index t,
                                  std::mt19937_64& rng);

// Positions of the k largest scores, ties going to the larger step; the
// result is sorted ascending. keep_smallest is the mirror image.
std::vector<Index> keep_largest(const std::vector<double>& scores, const std::vector<Index>& steps,
                                Index k);
std::vector<Index> keep_smallest(const std::vector<double>& scores,
                                 const std::vector<Index>& steps, Index k);

// Pointwise loss of every entry under the given user embedding.
std::vector<double> entry_losses(const IntermediateSketch& inter, const rec::RecParams& params,
                                 const ad::Tensor& user);

// Keeps the K entries with the largest current loss.
std::vector<SketchEntry> hardest_update(const IntermediateSketch& inter, Index k,
                                        const rec::RecParams& params, const ad::Tensor& user);

inline constexpr double kInfluenceDamping = 1e-3;

// I(j) = -grad(target)^T H^{-1} grad(loss_j) for every entry j, where the
// target is the mean loss over all entries and H is the Hessian, in the user
// embedding, of sum_i fit_weights_i * loss_i plus damping * I, all evaluated at
// `user_star`. Negative scores mark entries whose up-weighting lowers the target.
std::vector<double> influence_scores(const IntermediateSketch& inter,
                                     const std::vector<double>& fit_weights,
                                     const rec::RecParams& params, const ad::Tensor& user_star,
                                     double damping = kInfluenceDamping);

// Keeps the K entries with the lowest (most helpful) influence scores.
std::vector<SketchEntry> influence_update(const IntermediateSketch& inter, Index k,
                                          const std::vector<double>& fit_weights,
                                          const rec::RecParams& params,
                                          const ad::Tensor& user_star,
                                          double damping = kInfluenceDamping);

}  // namespace dips::policy
