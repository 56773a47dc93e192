// Next-item evaluation: at every step the sketch is updated with the frozen
// policy, the user embedding is adapted on it and item t+1 is scored.
#pragma once

#include "dips/data/dataset.hpp"
#include "dips/metrics/metrics.hpp"
#include "dips/train/config.hpp"
#include "dips/train/trainer.hpp"

#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace dips::metrics {

// Explicit runs emit "error" (prediction - truth); implicit runs emit "rank".
struct EvalRecord {
  Index user = 0;
  Index step = 0;
  std::string metric;
  double value = 0.0;

  std::string to_json() const;
};

struct EvalResult {
  std::vector<EvalRecord> records;  // sorted by (user, step)
  // Explicit: rmse. Implicit: recall@20, mrr@20.
  std::map<std::string, double> aggregates;
  Index users = 0;
  Index skipped_users = 0;
};

// Recomputes the aggregates of an explicit or implicit record stream.
std::map<std::string, double> aggregate(const std::vector<EvalRecord>& records, bool implicit,
                                        Index k = 20);

struct EvalHooks {
  // Called per step from worker threads; must be thread-safe.
  std::function<void(const data::UserStream&, const train::StepResult&)> on_step;
};

// Selection uses cfg.eval_select. Random policies draw from per-user streams
// seeded by `seed`. Parameters are never modified.
EvalResult evaluate(const train::TrainConfig& cfg, const train::TrainState& state,
                    const std::vector<data::UserStream>& users, Index num_items,
                    std::uint64_t seed, const EvalHooks& hooks = {});

struct TableRow {
  std::string policy;
  Index K = 0;
  Index tau = 0;
  std::string metric;
  MeanStd stats;
};

// Columns: policy,K,tau,metric,mean,std,n
void write_table_csv(std::ostream& out, const std::vector<TableRow>& rows);

// One row per metric from results of the same cell over several seeds.
std::vector<TableRow> summarize(const std::string& policy, Index k, Index tau,
                                const std::vector<EvalResult>& per_seed);

}  // namespace dips::metrics
