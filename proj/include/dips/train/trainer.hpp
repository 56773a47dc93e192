// Mini-batch bilevel training over user streams.
//
// Users of a mini-batch advance in lockstep: at every step t each active user
// runs Episode::step in parallel, then the per-user gradients are averaged in
// user order and applied once (momentum SGD on the user prior, Adam on the
// item side and on the policy). Results do not depend on the thread count.
#pragma once

#include "dips/data/dataset.hpp"
#include "dips/policy/policy_net.hpp"
#include "dips/rec/model.hpp"
#include "dips/train/config.hpp"
#include "dips/train/episode.hpp"

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace dips::train {

// One line of the metric log.
struct MetricRecord {
  Index epoch = 0;
  std::string split;
  std::string metric;
  double value = 0.0;
  Index K = 0;
  Index tau = 0;
  std::string policy;
  std::uint64_t seed = 0;

  std::string to_json() const;
  static MetricRecord from_json(const std::string& line);
};

void write_metric_log(std::ostream& out, const std::vector<MetricRecord>& records);

struct TrainState {
  rec::RecParams theta;
  policy::PolicyParams phi;
};

// Fresh parameters from the config seed.
TrainState init_state(const TrainConfig& cfg, Index num_items);

struct TrainHooks {
  // Called after each epoch; returned records are appended to the log.
  std::function<std::vector<MetricRecord>(Index epoch, const TrainState&)> validate;
  std::function<void(const std::string&)> warn;
  // Called serially after every lockstep step, before the optimizer updates,
  // for each user that stepped. `batch_pos` is the user's slot in the batch.
  std::function<void(Index batch_pos, const Episode&, const StepResult&, const TrainState&)>
      on_step;
};

struct TrainResult {
  TrainState state;
  std::vector<MetricRecord> log;
  Index theta_updates = 0;
  Index policy_updates = 0;
  Index skipped_users = 0;
};

// Trains from `init` (or fresh parameters) for cfg.epochs epochs.
TrainResult train(const TrainConfig& cfg, const std::vector<data::UserStream>& users,
                  Index num_items, const TrainHooks& hooks = {},
                  std::optional<TrainState> init = std::nullopt);

// FNV-1a hash of the bytes of every item-side parameter.
std::uint64_t item_side_checksum(const rec::RecParams& theta);

}  // namespace dips::train
