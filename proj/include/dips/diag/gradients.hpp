// Exact policy gradients by replay, and how the queue approximation compares.
//
// The replay reruns a user's sketching from t = 1 with the current parameters
// (deterministic selection, no dropout), then sums the straight-through
// surrogate of every selection made so far against the current v. The
// approximation differs only through the queue length and through past
// selections having been made with older policy weights.
#pragma once

#include "dips/data/dataset.hpp"
#include "dips/train/config.hpp"
#include "dips/train/trainer.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace dips::diag {

using ad::Index;
using ad::Matrix;

struct ReplayLimits {
  Index max_length = 51;  // interactions per stream
  Index max_items = 128;
};

struct ReplayGradient {
  std::vector<Matrix> grads;  // aligned with PolicyParams::all()
  Matrix v;                   // 1 x M, empty when no selection was made at `step`
  Index selections = 0;       // history terms summed
};

// Gradient at step `step` (1-based) of `stream`. Zero when the learned policy
// made no selection at that step.
ReplayGradient true_policy_grad(const data::UserStream& stream, Index step,
                                const train::TrainConfig& cfg, const train::TrainState& state,
                                const ReplayLimits& limits = {});

// Sum of surrogate gradients of `history` against v, without dropout.
std::vector<Matrix> replay_policy_grad(const std::vector<train::SelectionEntry>& history,
                                       const policy::PolicyParams& phi, const Matrix& v_all);

// Fractions over coordinates where |true| > eps: preserved (same sign),
// negated (opposite sign), zeroed (|approx| <= eps). Spurious is over the
// remaining coordinates: |approx| > eps where the truth is zero.
struct GradReport {
  double preserved = 0.0;
  double negated = 0.0;
  double zeroed = 0.0;
  double spurious = 0.0;
  double cosine = 0.0;
  Index nonzero = 0;
  Index zero = 0;
};

inline constexpr double kZeroTolerance = 1e-12;

// Throws InvalidArgument on shape mismatch or an all-zero truth.
GradReport direction_stats(const std::vector<Matrix>& approx, const std::vector<Matrix>& truth,
                           double eps = kZeroTolerance);

struct DiagnoseOptions {
  Index max_probes = 200;  // probe steps per method
  Index probe_users = 4;   // probed users per lockstep batch
  ReplayLimits limits;
};

struct ProbeRecord {
  Index epoch = 0;
  Index user = 0;
  Index step = 0;
  std::string method;  // "dips" or "dips1"
  GradReport report;

  std::string to_json() const;
};

struct DiagnoseResult {
  std::vector<ProbeRecord> records;
  train::TrainResult training;
  Index skipped_probes = 0;  // selection steps whose true gradient was zero
};

// Mean of each report field over the records of one method.
GradReport mean_report(const std::vector<ProbeRecord>& records, const std::string& method);

// Trains the learned policy and, at probed selection steps, compares the
// queue gradient ("dips") and the current-term gradient ("dips1") with the
// replay gradient. Training selection is forced to deterministic and dropout
// in the policy gradient off, so both sides see the same selections.
DiagnoseResult diagnose(train::TrainConfig cfg, const std::vector<data::UserStream>& users,
                        Index num_items, const DiagnoseOptions& options = {});

void write_probe_log(std::ostream& out, const std::vector<ProbeRecord>& records);

}  // namespace dips::diag
