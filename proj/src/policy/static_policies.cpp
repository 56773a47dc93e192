#include "dips/policy/static_policies.hpp"

#include "dips/ad/autograd.hpp"
#include "dips/ad/ops.hpp"
#include "dips/common/error.hpp"

#include <Eigen/LU>
#include <fmt/format.h>

#include <algorithm>
#include <numeric>

namespace dips::policy {

using ad::Tensor;

ReservoirOutcome reservoir_update(Sketch& sketch, const SketchEntry& incoming, Index t,
                                  std::mt19937_64& rng) {
  if (sketch.contains(incoming.item)) {
    throw InvalidArgument(fmt::format("reservoir_update: item {} already in the sketch", incoming.item));
  }
  if (t < 1) throw InvalidArgument("reservoir_update: step must be >= 1");
  ReservoirOutcome out;
  if (!sketch.full()) {
    sketch.insert(incoming);
    out.inserted = true;
    return out;
  }
  // Replace with probability K/t: draw j uniform in [0, t) and replace slot j if j < K.
  std::uniform_int_distribution<Index> draw(0, t - 1);
  const Index j = draw(rng);
  if (j < sketch.capacity()) {
    out.inserted = true;
    out.evicted = sketch.entries()[j].item;
    sketch.replace(j, incoming);
  }
  return out;
}

namespace {

std::vector<Index> keep_by(const std::vector<double>& scores, const std::vector<Index>& steps,
                           Index k, bool largest) {
  if (scores.size() != steps.size()) throw InvalidArgument("keep: scores and steps differ in length");
  const Index n = static_cast<Index>(scores.size());
  if (k >= n) {
    std::vector<Index> all(n);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (scores[a] != scores[b]) return largest ? scores[a] > scores[b] : scores[a] < scores[b];
    return steps[a] > steps[b];
  });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<Index> entry_steps(const IntermediateSketch& inter) {
  std::vector<Index> s;
  for (const auto& e : inter.entries) s.push_back(e.step);
  return s;
}

std::vector<SketchEntry> pick(const IntermediateSketch& inter, const std::vector<Index>& pos) {
  std::vector<SketchEntry> out;
  for (Index p : pos) out.push_back(inter.entries[p]);
  return out;
}

}  // namespace

std::vector<Index> keep_largest(const std::vector<double>& scores, const std::vector<Index>& steps,
                                Index k) {
  return keep_by(scores, steps, k, true);
}

std::vector<Index> keep_smallest(const std::vector<double>& scores,
                                 const std::vector<Index>& steps, Index k) {
  return keep_by(scores, steps, k, false);
}

std::vector<double> entry_losses(const IntermediateSketch& inter, const rec::RecParams& params,
                                 const Tensor& user) {
  if (inter.entries.empty()) return {};
  ad::NoGradGuard no_grad;
  const auto items = inter.items();
  const auto ratings = inter.ratings();
  const ad::Matrix l = rec::block_losses(params, rec::prepare_block(params, items, ratings), user).value();
  return std::vector<double>(l.data(), l.data() + l.size());
}

std::vector<SketchEntry> hardest_update(const IntermediateSketch& inter, Index k,
                                        const rec::RecParams& params, const Tensor& user) {
  return pick(inter, keep_largest(entry_losses(inter, params, user), entry_steps(inter), k));
}

std::vector<double> influence_scores(const IntermediateSketch& inter,
                                     const std::vector<double>& fit_weights,
                                     const rec::RecParams& params, const Tensor& user_star,
                                     double damping) {
  const Index n = inter.size();
  if (static_cast<Index>(fit_weights.size()) != n) {
    throw InvalidArgument("influence_scores: one fit weight per entry required");
  }
  if (n == 0) return {};
  ad::GradModeGuard record(true);
  const Index d = user_star.cols();
  Tensor u = user_star.detach().clone(true);
  const auto items = inter.items();
  const auto ratings = inter.ratings();
  const rec::ItemBlock block = rec::prepare_block(params, items, ratings);
  const Tensor losses = rec::block_losses(params, block, u);  // n x 1
  const Tensor us[] = {u};

  ad::Matrix per_entry(n, d);
  for (Index j = 0; j < n; ++j) {
    per_entry.row(j) = ad::grad(ad::gather_rows(losses, std::vector<Index>{j}), us)[0].value();
  }
  const ad::Matrix target = per_entry.colwise().mean();

  ad::Matrix w(1, n);
  for (Index j = 0; j < n; ++j) w(0, j) = fit_weights[j];
  const Tensor fit = ad::matmul(Tensor(w), losses);
  const Tensor g = ad::grad(fit, us, ad::GradOptions{.create_graph = true})[0];
  ad::Matrix h(d, d);
  for (Index i = 0; i < d; ++i) {
    h.row(i) = ad::grad(ad::slice_cols(g, i, 1), us)[0].value();
  }
  h = 0.5 * (h + h.transpose()).eval();
  h.diagonal().array() += damping;

  Eigen::FullPivLU<Eigen::MatrixXd> lu(h);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) {
    throw NumericalError(fmt::format(
        "influence_scores: Hessian is singular even with damping {} (rank {} of {})", damping,
        lu.rank(), d));
  }
  const Eigen::VectorXd s = lu.solve(Eigen::VectorXd(target.transpose()));
  std::vector<double> scores(n);
  for (Index j = 0; j < n; ++j) scores[j] = -per_entry.row(j).dot(s);
  return scores;
}

std::vector<SketchEntry> influence_update(const IntermediateSketch& inter, Index k,
                                          const std::vector<double>& fit_weights,
                                          const rec::RecParams& params, const Tensor& user_star,
                                          double damping) {
  if (inter.size() <= k) return inter.entries;
  return pick(inter, keep_smallest(influence_scores(inter, fit_weights, params, user_star, damping),
                                   entry_steps(inter), k));
}

}  // namespace dips::policy
