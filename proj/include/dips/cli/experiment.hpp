// Experiment configuration: one flat key = value file plus overrides.
//
// Any TrainConfig key is accepted. policy, K, tau and seed take comma
// separated lists and span the sweep grid. Further keys:
//   out                   output directory
//   dataset               "synthetic" or a file path
//   format                movielens-dat, csv or cache
//   min_user_ratings      users with fewer ratings are dropped (explicit)
//   implicit_threshold    ratings above it count as positive (implicit)
//   k_core                k-core filter, 0 = off
//   cache                 binary cache path: read if present, else written
//   split_seed            seed of the 60/20/20 user split
//   synth.<field>         SynthConfig fields, plus synth.seed
//   diag.max_probes, diag.probe_users, diag.max_length, diag.max_items
//   eval_records          also write per-step evaluation records
#pragma once

#include "dips/data/dataset.hpp"
#include "dips/data/synth.hpp"
#include "dips/diag/gradients.hpp"
#include "dips/train/config.hpp"

#include <string>
#include <utility>
#include <vector>

namespace dips::cli {

using ad::Index;

struct DatasetConfig {
  std::string source = "synthetic";
  data::Format format = data::Format::csv;
  bool from_cache = false;
  Index min_user_ratings = 0;
  double implicit_threshold = 3.5;
  Index k_core = 0;
  std::string cache;
  data::SplitSpec split;
  data::SynthConfig synth;
  std::uint64_t synth_seed = 0;
};

struct Cell {
  std::string name;  // e.g. dips-K4-tau1-seed0
  train::TrainConfig cfg;
};

struct ExperimentConfig {
  train::TrainConfig base;
  DatasetConfig data;
  std::string out = "runs/default";
  std::vector<train::PolicyKind> policies{train::PolicyKind::dips};
  std::vector<Index> Ks{4};
  std::vector<Index> taus{1};
  std::vector<std::uint64_t> seeds{0};
  bool eval_records = false;
  diag::DiagnoseOptions diagnose;

  // Throws ConfigError naming the source line on unknown keys or bad values.
  static ExperimentConfig from_key_values(const std::vector<train::KeyValue>& kvs);
  static ExperimentConfig load(const std::string& path, const std::vector<std::string>& overrides);

  void validate() const;
  std::vector<Cell> cells() const;
  // Every setting after resolution, in a fixed order.
  std::vector<std::pair<std::string, std::string>> resolved() const;
};

struct ExperimentData {
  data::Dataset full;
  data::Split split;
  std::vector<std::string> written;  // files created while loading (cache)
};

ExperimentData load_experiment_data(const ExperimentConfig& cfg);

}  // namespace dips::cli
