// Subcommands of the experiment driver. Each returns a process exit code and
// lets dips::Error propagate; exit_code maps those to codes.
#pragma once

#include "dips/cli/experiment.hpp"
#include "dips/diag/gradcheck.hpp"

#include <iosfwd>
#include <string>

namespace dips::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

int exit_code(const std::exception& e);

// Writes <out>/<cell>/{theta,phi}.params and metrics.jsonl per grid cell, and
// <out>/manifest.train.json.
int cmd_train(const ExperimentConfig& cfg, std::ostream& log, int jobs = 1);

// Evaluates every cell's checkpoint from `checkpoint_dir` on the test split and
// writes <out>/table.csv (plus per-record streams with eval_records) and
// <out>/manifest.eval.json.
int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_dir, std::ostream& log);

int cmd_gradcheck(std::ostream& log, const diag::GradcheckOptions& options = {});

// Writes <out>/diagnose/<cell>.jsonl and <out>/manifest.diagnose.json.
int cmd_diagnose(const ExperimentConfig& cfg, std::ostream& log);

// One line-delimited record per step of `user`'s evaluation episode.
int cmd_dump_trace(const ExperimentConfig& cfg, const std::string& checkpoint_dir,
                   const std::string& cell, Index user, std::ostream& out);

}  // namespace dips::cli
