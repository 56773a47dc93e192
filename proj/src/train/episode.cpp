#include "dips/train/episode.hpp"

#include "dips/ad/ops.hpp"
#include "dips/common/error.hpp"
#include "dips/metrics/metrics.hpp"
#include "dips/policy/static_policies.hpp"
#include "dips/policy/topk.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace dips::train {

StepOptions StepOptions::training(const TrainConfig& cfg) {
  StepOptions o;
  o.phase = Phase::train;
  o.select = cfg.train_select;
  o.dropout = cfg.policy_grad_dropout && cfg.policy_dropout > 0.0;
  return o;
}

StepOptions StepOptions::evaluation(const TrainConfig& cfg) {
  StepOptions o;
  o.phase = Phase::eval;
  o.select = cfg.eval_select;
  o.dropout = false;
  o.want_v = false;
  o.policy_grads = false;
  return o;
}

Episode::Episode(const data::UserStream& stream, const TrainConfig& cfg, Index num_items,
                 std::uint64_t seed)
    : stream_(&stream),
      cfg_(&cfg),
      num_items_(num_items),
      rng_(seed),
      sketch_(cfg.K, num_items),
      seen_mask_(static_cast<std::size_t>(num_items), 0),
      queue_(cfg.queue_capacity()) {
  if (stream.events.size() < 2) {
    throw InvalidArgument(fmt::format("user {}: a stream needs at least 2 interactions", stream.user));
  }
  seen_items_.reserve(stream.events.size());
  seen_ratings_.reserve(stream.events.size());
}

double Episode::rating_of(const data::Interaction& e) const {
  return cfg_->setting == rec::Setting::implicit_feedback ? 1.0 : e.rating;
}

Tensor Episode::adapt_on_sketch(const rec::RecParams& theta) const {
  std::vector<Index> items;
  std::vector<double> ratings;
  for (const auto& e : sketch_.entries()) {
    items.push_back(e.item);
    ratings.push_back(e.rating);
  }
  const rec::ItemBlock block = rec::prepare_block(theta, items, ratings);
  const Tensor w = Tensor::ones(1, static_cast<Index>(items.size()));
  return inner_adapt(theta, block, w, cfg_->inner_lr, cfg_->inner_steps, false);
}

void Episode::select(const policy::IntermediateSketch& inter, const rec::RecParams& theta,
                     const policy::PolicyParams* phi, const StepOptions& opt) {
  const Index k = cfg_->K;
  const Index n = inter.size();
  std::vector<Index> steps(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) steps[i] = inter.entries[i].step;

  switch (cfg_->policy) {
    case PolicyKind::random:
      for (const auto& p : pending_) policy::reservoir_update(sketch_, p, p.step, rng_);
      return;
    case PolicyKind::earliest: {
      std::vector<double> s(steps.begin(), steps.end());
      std::vector<policy::SketchEntry> keep;
      for (Index pos : policy::keep_smallest(s, steps, k)) keep.push_back(inter.entries[pos]);
      sketch_.assign(std::move(keep));
      return;
    }
    case PolicyKind::hardest: {
      const Tensor u = adapt_on_sketch(theta);
      sketch_.assign(policy::hardest_update(inter, k, theta, u));
      return;
    }
    case PolicyKind::influence: {
      const Tensor u = adapt_on_sketch(theta);
      std::vector<double> fit(static_cast<std::size_t>(n), 0.0);
      std::fill(fit.begin(), fit.begin() + sketch_.size(), 1.0);
      sketch_.assign(
          policy::influence_update(inter, k, fit, theta, u, cfg_->influence_damping));
      return;
    }
    case PolicyKind::dips:
    case PolicyKind::dips1:
      break;
  }

  if (phi == nullptr) throw InvalidArgument("learned policy selected without policy parameters");
  ad::NoGradGuard no_grad;
  if (opt.dropout) current_masks_ = policy::DropoutMasks::sample(*phi, rng_);
  const Tensor scores = policy::candidate_scores(inter, *phi, last_masks());
  const std::span<const double> f(scores.value().data(), static_cast<std::size_t>(n));

  SelectionEntry sel;
  sel.inter = inter;
  sel.keep = k;
  sel.w = Matrix::Zero(1, n);
  std::vector<policy::SketchEntry> keep;
  if (cfg_->update_period() == 1) {
    sel.removal_head = true;
    const Index pos = policy::online_remove(f, opt.select, rng_);
    sel.w(0, pos) = 1.0;
    for (Index i = 0; i < n; ++i) {
      if (i != pos) keep.push_back(inter.entries[i]);
    }
  } else {
    sel.removal_head = false;
    const policy::TopKResult u = policy::topk_project(f, k);
    for (Index pos : policy::batch_keep(u.u, k, opt.select, rng_)) {
      sel.w(0, pos) = 1.0;
      keep.push_back(inter.entries[pos]);
    }
  }
  sketch_.assign(std::move(keep));
  current_ = std::move(sel);
}

StepResult Episode::step(const rec::RecParams& theta, const policy::PolicyParams* phi,
                         const StepOptions& opt) {
  if (done()) throw InvalidArgument(fmt::format("user {}: stream exhausted", user()));
  const Index t = t_;
  const data::Interaction& cur = stream_->events[t - 1];
  const data::Interaction& next = stream_->events[t];

  StepResult out;
  out.step = t;
  out.trace.step = t;
  out.trace.incoming = cur.item;
  out.trace.next_item = next.item;
  current_.reset();
  current_masks_.reset();

  const policy::SketchEntry incoming{cur.item, rating_of(cur), t};
  seen_items_.push_back(cur.item);
  seen_ratings_.push_back(incoming.rating);
  seen_mask_[cur.item] = 1;
  pending_.push_back(incoming);

  const policy::IntermediateSketch inter = policy::IntermediateSketch::from(sketch_, pending_);
  if (inter.size() <= cfg_->K) {
    sketch_.assign(inter.entries);
    pending_.clear();
  } else if (static_cast<Index>(pending_.size()) == cfg_->update_period()) {
    select(inter, theta, phi, opt);
    pending_.clear();
    out.trace.selected = true;
    for (const auto& e : inter.entries) {
      if (!sketch_.contains(e.item)) out.trace.removed.push_back(e.item);
    }
  }
  out.trace.sketch = sketch_.items();
  out.learned_selection = current_.has_value();
  const double next_rating = rating_of(next);

  if (opt.phase == Phase::eval) {
    const Tensor u = adapt_on_sketch(theta);
    ad::NoGradGuard no_grad;
    out.target = next_rating;
    if (cfg_->setting == rec::Setting::explicit_feedback) {
      const Index one[] = {next.item};
      const double r[] = {next_rating};
      out.prediction = rec::block_predictions(theta, rec::prepare_block(theta, one, r), u).item();
      out.trace.success = std::abs(out.prediction - next_rating) < 0.5;
    } else {
      const Tensor scores = rec::implicit_scores(theta, u);
      const std::span<const double> s(scores.value().data(), static_cast<std::size_t>(num_items_));
      out.rank = metrics::rank_of(next.item, s,
                                  cfg_->exclude_history ? std::span<const std::uint8_t>(seen_mask_)
                                                        : std::span<const std::uint8_t>());
      out.trace.success = out.rank <= 20;
    }
    if (opt.keep_history && current_) history_.push_back(*current_);
    ++t_;
    return out;
  }

  // Training: the full history block carries v for every past item; without
  // v the sketch items alone give the same loss.
  const bool want_v = out.learned_selection && opt.want_v;
  std::vector<Index> items;
  std::vector<double> ratings;
  Matrix weights;
  if (want_v) {
    items = seen_items_;
    ratings = seen_ratings_;
    weights = Matrix::Zero(1, static_cast<Index>(items.size()));
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (sketch_.contains(items[i])) weights(0, static_cast<Index>(i)) = 1.0;
    }
  } else {
    for (const auto& e : sketch_.entries()) {
      items.push_back(e.item);
      ratings.push_back(e.rating);
    }
    weights = Matrix::Ones(1, static_cast<Index>(items.size()));
  }
  const rec::ItemBlock block = rec::prepare_block(theta, items, ratings);
  OuterResult r = outer_grads(theta, block, weights, cfg_->inner_lr, cfg_->inner_steps, next.item,
                              next_rating, want_v);
  out.loss = r.loss;
  out.theta_grads = std::move(r.theta);
  if (want_v) {
    out.v = expand_v(r.v, items, num_items_);
    if (opt.policy_grads) {
      out.phi_grads = approx_policy_grad(queue_, *phi, out.v, *current_, last_masks(),
                                         opt.dropout, rng_);
    }
  }
  if (current_) {
    queue_.push(*current_);
    if (opt.keep_history) history_.push_back(*current_);
  }
  ++t_;
  return out;
}

}  // namespace dips::train
