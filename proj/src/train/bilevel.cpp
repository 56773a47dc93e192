#include "dips/train/bilevel.hpp"

#include "dips/ad/autograd.hpp"
#include "dips/ad/ops.hpp"
#include "dips/common/error.hpp"

#include <fmt/format.h>

#include <cmath>

namespace dips::train {

Tensor inner_adapt(const rec::RecParams& global, const rec::ItemBlock& block,
                   const Tensor& weights, double alpha, Index steps, bool record) {
  if (steps == 0 || alpha == 0.0 || block.items.empty()) {
    return record ? global.user : global.user.detach();
  }
  if (record) {
    Tensor u = global.user;
    for (Index s = 0; s < steps; ++s) {
      Tensor loss = rec::weighted_block_loss(global, block, weights, u);
      const Tensor params[] = {u};
      Tensor g = ad::grad(loss, params, {.create_graph = true})[0];
      u = ad::sub(u, ad::scale(g, alpha));
    }
    return u;
  }
  const Tensor w = weights.detach();
  Tensor u = global.user.clone(true);
  for (Index s = 0; s < steps; ++s) {
    Tensor loss = rec::weighted_block_loss(global, block, w, u);
    const Tensor params[] = {u};
    const Matrix g = ad::grad(loss, params)[0].value();
    u = Tensor(u.value() - alpha * g, true);
  }
  return u.detach();
}

rec::LocalParams inner_adapt(const rec::RecParams& global, const Tensor& z,
                             const rec::RatingVector& y, double alpha, Index steps, bool record) {
  rec::LocalParams theta = rec::LocalParams::from_global(global);
  if (steps == 0 || alpha == 0.0) {
    if (!record) theta.user = global.user.detach();
    return theta;
  }
  Tensor u = record ? global.user : global.user.clone(true);
  for (Index s = 0; s < steps; ++s) {
    theta.user = u;
    Tensor loss = rec::sketch_loss(z, y, theta);
    const Tensor params[] = {u};
    if (record) {
      Tensor g = ad::grad(loss, params, {.create_graph = true})[0];
      u = ad::sub(u, ad::scale(g, alpha));
    } else {
      const Matrix g = ad::grad(loss, params)[0].value();
      u = Tensor(u.value() - alpha * g, true);
    }
  }
  theta.user = record ? u : u.detach();
  return theta;
}

OuterResult outer_grads(const rec::RecParams& global, const rec::ItemBlock& block,
                        const Matrix& weights, double alpha, Index steps, Index next_item,
                        double next_rating, bool want_v) {
  if (weights.rows() != 1 || weights.cols() != static_cast<Index>(block.items.size())) {
    throw InvalidArgument(fmt::format("outer_grads: {}x{} weights for {} block items",
                                      weights.rows(), weights.cols(), block.items.size()));
  }
  Tensor w(weights, want_v);
  Tensor u = inner_adapt(global, block, w, alpha, steps, true);
  Tensor loss = rec::item_loss(global, u, next_item, next_rating);

  std::vector<Tensor> params = global.all();
  if (want_v) params.push_back(w);
  std::vector<Tensor> g = ad::grad_through_grad(loss, params);

  OuterResult out;
  out.loss = loss.item();
  if (!std::isfinite(out.loss)) {
    throw NumericalError(fmt::format("outer loss is not finite on item {}", next_item));
  }
  if (want_v) {
    out.v = g.back().value();
    g.pop_back();
  }
  out.theta.reserve(g.size());
  for (auto& t : g) out.theta.push_back(t.value());
  return out;
}

void SketchQueue::push(SelectionEntry entry) {
  if (capacity_ <= 0) return;
  entries_.push_back(std::move(entry));
  while (size() > capacity_) entries_.pop_front();
}

Matrix expand_v(const Matrix& v_block, std::span<const Index> block_items, Index num_items) {
  if (v_block.size() != static_cast<Index>(block_items.size())) {
    throw InvalidArgument("expand_v: v and block differ in length");
  }
  Matrix v = Matrix::Zero(1, num_items);
  for (std::size_t i = 0; i < block_items.size(); ++i) {
    v(0, block_items[i]) = v_block(0, static_cast<Index>(i));
  }
  return v;
}

std::vector<Matrix> surrogate_policy_grad(std::span<const SelectionEntry* const> entries,
                                          std::span<const policy::DropoutMasks* const> masks,
                                          const policy::PolicyParams& phi,
                                          const Matrix& v_all, const policy::TopKVjp& vjp) {
  if (masks.size() != entries.size()) {
    throw InvalidArgument("surrogate_policy_grad: one mask slot per entry required");
  }
  const std::vector<Tensor> params = phi.all();
  std::vector<Matrix> out;
  for (const auto& p : params) out.push_back(Matrix::Zero(p.rows(), p.cols()));
  if (entries.empty()) return out;

  // All entries go through the score network as one batch; rows without
  // masks get an all-ones mask when others have one.
  const Index e = static_cast<Index>(entries.size());
  std::vector<const policy::IntermediateSketch*> inters;
  bool any_mask = false;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    inters.push_back(&entries[i]->inter);
    any_mask = any_mask || masks[i] != nullptr;
  }
  policy::DropoutMasks stacked;
  if (any_mask) {
    stacked.h1 = Matrix::Ones(e, phi.hidden);
    stacked.h2 = Matrix::Ones(e, phi.hidden);
    for (Index r = 0; r < e; ++r) {
      if (!masks[r]) continue;
      stacked.h1.row(r) = masks[r]->h1;
      stacked.h2.row(r) = masks[r]->h2;
    }
  }
  policy::CandidateBatch layout;
  const Tensor scores =
      policy::batched_candidate_scores(inters, phi, any_mask ? &stacked : nullptr, &layout);
  const Index u = static_cast<Index>(layout.items.size());

  Matrix v = Matrix::Zero(e, u);
  Matrix w = Matrix::Zero(e, u);
  std::vector<Index> removal_rows;
  for (Index r = 0; r < e; ++r) {
    const SelectionEntry& s = *entries[r];
    if (s.w.cols() != s.inter.size()) {
      throw InvalidArgument("surrogate_policy_grad: selection and sketch differ in size");
    }
    for (Index i = 0; i < s.inter.size(); ++i) {
      const Index col = layout.columns[r][i];
      v(r, col) = v_all(0, s.inter.entries[i].item);
      w(r, col) = s.w(0, i);
    }
    if (s.removal_head) removal_rows.push_back(r);
  }

  // Removal head: z = 1 - ST(w, softmax(f)); Top-K head: z = ST(w, topk(f)).
  Tensor total;
  auto add_term = [&](const Tensor& t) { total = total.defined() ? ad::add(total, t) : t; };
  if (!removal_rows.empty()) {
    auto pick = [&](const Matrix& m) {
      Matrix sub(static_cast<Index>(removal_rows.size()), u);
      for (std::size_t i = 0; i < removal_rows.size(); ++i) sub.row(i) = m.row(removal_rows[i]);
      return sub;
    };
    const Tensor f = static_cast<Index>(removal_rows.size()) == e
                         ? scores
                         : ad::gather_rows(scores, removal_rows);
    const Matrix vr = pick(v);
    const Tensor removed = policy::straight_through(ad::softmax(f), pick(w));
    add_term(ad::sum(ad::mul(Tensor(vr), ad::sub(Tensor::ones(vr.rows(), u), removed))));
  }
  for (Index r = 0; r < e; ++r) {
    const SelectionEntry& s = *entries[r];
    if (s.removal_head) continue;
    const Index one[] = {r};
    const Tensor f = e == 1 ? scores : ad::gather_rows(scores, one);
    const Tensor z = policy::straight_through(policy::topk(f, s.keep, vjp), w.row(r));
    add_term(ad::sum(ad::mul(Tensor(Matrix(v.row(r))), z)));
  }
  std::vector<Tensor> g = ad::grad(total, params);
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i].value();
  return out;
}

std::vector<Matrix> approx_policy_grad(const SketchQueue& queue, const policy::PolicyParams& phi,
                                       const Matrix& v_all, const SelectionEntry& current,
                                       const policy::DropoutMasks* current_masks, bool dropout,
                                       std::mt19937_64& rng) {
  std::vector<const SelectionEntry*> entries;
  std::vector<policy::DropoutMasks> fresh;
  fresh.reserve(queue.entries().size());
  for (const auto& e : queue.entries()) {
    entries.push_back(&e);
    if (dropout) fresh.push_back(policy::DropoutMasks::sample(phi, rng));
  }
  std::vector<const policy::DropoutMasks*> masks;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    masks.push_back(dropout ? &fresh[i] : nullptr);
  }
  entries.push_back(&current);
  masks.push_back(current_masks);
  return surrogate_policy_grad(entries, masks, phi, v_all);
}

}  // namespace dips::train
