// One user's pass over their stream.
//
// Step t (1-based, t = 1 .. T-1):
//   1. x_t joins the pending items; the intermediate sketch is sketch + pending.
//   2. If it holds at most K entries it becomes the sketch (warm-up). Otherwise,
//      once `update_period` items are pending, the configured policy selects
//      the new sketch.
//   3. The user embedding is adapted on the sketch and x_{t+1} is predicted.
// Training additionally returns the meta-gradients of the next-item loss and,
// at selection steps of the learned policy, the queue policy gradient.
#pragma once

#include "dips/data/dataset.hpp"
#include "dips/policy/sketch.hpp"
#include "dips/train/bilevel.hpp"
#include "dips/train/config.hpp"

#include <limits>
#include <optional>
#include <random>
#include <vector>

namespace dips::train {

enum class Phase { train, eval };

struct StepOptions {
  Phase phase = Phase::train;
  policy::SelectMode select = policy::SelectMode::stochastic;
  // Dropout in the policy network's forward passes.
  bool dropout = false;
  // Compute v = d loss / d z at selection steps of the learned policy.
  bool want_v = true;
  // Compute the queue policy gradient at those steps.
  bool policy_grads = true;
  // Retain every selection the learned policy makes.
  bool keep_history = false;

  static StepOptions training(const TrainConfig& cfg);
  static StepOptions evaluation(const TrainConfig& cfg);
};

struct StepTrace {
  Index step = 0;
  Index incoming = 0;
  bool selected = false;
  std::vector<Index> removed;  // intermediate entries dropped at this step
  std::vector<Index> sketch;   // sketch items after the step, in entry order
  Index next_item = 0;
  bool success = false;        // eval only: rank <= 20, or |error| < 0.5
};

struct StepResult {
  Index step = 0;
  double loss = std::numeric_limits<double>::quiet_NaN();
  std::vector<Matrix> theta_grads;  // aligned with RecParams::all()
  bool learned_selection = false;
  Matrix v;                         // 1 x M when computed
  std::vector<Matrix> phi_grads;    // aligned with PolicyParams::all()
  // Evaluation.
  double target = 0.0;
  double prediction = 0.0;  // explicit rating prediction
  Index rank = 0;           // implicit rank of the next item
  StepTrace trace;
};

class Episode {
 public:
  Episode(const data::UserStream& stream, const TrainConfig& cfg, Index num_items,
          std::uint64_t seed);

  Index num_steps() const { return static_cast<Index>(stream_->events.size()) - 1; }
  Index next_step() const { return t_; }
  bool done() const { return t_ > num_steps(); }
  Index user() const { return stream_->user; }
  const data::UserStream& stream() const { return *stream_; }

  StepResult step(const rec::RecParams& theta, const policy::PolicyParams* phi,
                  const StepOptions& opt);

  const policy::Sketch& sketch() const { return sketch_; }
  const SketchQueue& queue() const { return queue_; }
  const std::vector<SelectionEntry>& history() const { return history_; }
  // The selection made in the latest step, if the learned policy made one.
  const std::optional<SelectionEntry>& last_selection() const { return current_; }
  const policy::DropoutMasks* last_masks() const {
    return current_masks_ ? &*current_masks_ : nullptr;
  }

 private:
  double rating_of(const data::Interaction& e) const;
  // Adapted user embedding on the current sketch, without graph.
  Tensor adapt_on_sketch(const rec::RecParams& theta) const;
  void select(const policy::IntermediateSketch& inter, const rec::RecParams& theta,
              const policy::PolicyParams* phi, const StepOptions& opt);

  const data::UserStream* stream_;
  const TrainConfig* cfg_;
  Index num_items_;
  Index t_ = 1;
  std::mt19937_64 rng_;
  policy::Sketch sketch_;
  std::vector<policy::SketchEntry> pending_;
  std::vector<Index> seen_items_;
  std::vector<double> seen_ratings_;
  std::vector<std::uint8_t> seen_mask_;
  SketchQueue queue_;
  std::vector<SelectionEntry> history_;
  std::optional<SelectionEntry> current_;
  std::optional<policy::DropoutMasks> current_masks_;
};

}  // namespace dips::train
