// The pieces of one bilevel step: inner adaptation of the user embedding on
// a weighted sketch, the outer next-item loss with its meta-gradients, and
// the queue-based policy gradient.
#pragma once

#include "dips/policy/policy_net.hpp"
#include "dips/policy/selection.hpp"
#include "dips/rec/model.hpp"

#include <deque>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace dips::train {

using ad::Index;
using ad::Matrix;
using ad::Tensor;

// Runs `steps` gradient steps u <- u - alpha * d/du sum_j w_j loss_j starting
// from the global user embedding. With `record` the steps stay on the graph
// (differentiable in the global parameters and in `weights`); otherwise the
// result is a plain value.
Tensor inner_adapt(const rec::RecParams& global, const rec::ItemBlock& block,
                   const Tensor& weights, double alpha, Index steps, bool record);

// The same on a length-M weight row over a rating vector.
rec::LocalParams inner_adapt(const rec::RecParams& global, const Tensor& z,
                             const rec::RatingVector& y, double alpha, Index steps,
                             bool record = true);

struct OuterResult {
  double loss = 0.0;
  // Gradients aligned with RecParams::all().
  std::vector<Matrix> theta;
  // d loss / d weight for every block item (1 x n); empty unless requested.
  Matrix v;
};

// Adapts on (block, weights), evaluates the loss on the next interaction and
// differentiates it through the unrolled inner steps.
OuterResult outer_grads(const rec::RecParams& global, const rec::ItemBlock& block,
                        const Matrix& weights, double alpha, Index steps, Index next_item,
                        double next_rating, bool want_v);

// One stored selection: the intermediate sketch the policy chose from, which
// head chose, and the 0/1 choice it made over the candidates.
struct SelectionEntry {
  policy::IntermediateSketch inter;
  bool removal_head = true;  // softmax removal (tau = 1) or Top-K keep
  Index keep = 0;            // K for the Top-K head
  Matrix w;                  // 1 x C: removed entry, or kept entries
};

class SketchQueue {
 public:
  explicit SketchQueue(Index capacity = 0) : capacity_(capacity) {}

  void push(SelectionEntry entry);
  void clear() { entries_.clear(); }
  Index capacity() const { return capacity_; }
  Index size() const { return static_cast<Index>(entries_.size()); }
  bool empty() const { return entries_.empty(); }
  // Oldest first.
  const std::deque<SelectionEntry>& entries() const { return entries_; }

 private:
  Index capacity_ = 0;
  std::deque<SelectionEntry> entries_;
};

// Scatter of per-block v into a length-M row over all items.
Matrix expand_v(const Matrix& v_block, std::span<const Index> block_items, Index num_items);

// d/dPhi of sum_e sum_c v[item_c] z_c(e; Phi) over the given selections, with
// z the straight-through post-selection indicator of each entry. `masks[e]`
// (may be null) fixes the dropout of entry e. Gradients align with
// PolicyParams::all().
std::vector<Matrix> surrogate_policy_grad(std::span<const SelectionEntry* const> entries,
                                          std::span<const policy::DropoutMasks* const> masks,
                                          const policy::PolicyParams& phi,
                                          const Matrix& v_all, const policy::TopKVjp& vjp = {});

// Current selection term plus every queue entry recomputed with the current
// Phi. Queue entries draw fresh dropout masks from `rng` when `dropout` is
// set; the current entry uses `current_masks`.
std::vector<Matrix> approx_policy_grad(const SketchQueue& queue, const policy::PolicyParams& phi,
                                       const Matrix& v_all, const SelectionEntry& current,
                                       const policy::DropoutMasks* current_masks, bool dropout,
                                       std::mt19937_64& rng);

}  // namespace dips::train
