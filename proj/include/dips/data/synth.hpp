// Synthetic streams with planted "anchor" structure.
//
// Every user has a latent factor p_u ~ N(0, I_r) and every item a factor q_j.
// The first `anchors_per_user` interactions of each stream are anchor items
// (ids [0, num_anchor_items)), whose observations are nearly noise-free; all
// later interactions are filler items observed with heavy noise.
//
// Explicit: r = mean + bias_j + w <p_u, q_j> + noise, noise sd anchor_noise on
//   anchors and filler_noise elsewhere.
// Implicit: anchors are drawn with probability proportional to
//   exp(w anchor_sharpness <p_u, q_j>) and fillers proportional to
//   exp(w filler_sharpness <p_u, q_j>), without repetition.
//
// w = anchor_weight. A sketch holding the anchors pins down p_u and with it
// every future observation, while recent fillers only hint at it; with
// w = 0 observations do not depend on the user and anchors carry nothing.
#pragma once

#include "dips/data/dataset.hpp"

#include <cstdint>

namespace dips::data {

struct SynthConfig {
  Index num_users = 2000;
  Index num_items = 500;
  Index length = 40;
  Index num_anchor_items = 50;
  Index anchors_per_user = 4;
  Index rank = 4;
  double anchor_weight = 1.0;
  bool implicit = false;
  // explicit
  double mean_rating = 3.0;
  double item_bias_sd = 0.3;
  double anchor_noise = 0.05;
  double filler_noise = 1.0;
  // implicit
  double anchor_sharpness = 4.0;
  double filler_sharpness = 1.0;

  void validate() const;
};

// Ground truth kept alongside the streams.
struct SynthTruth {
  ad::Matrix user_factors;  // N x r
  ad::Matrix item_factors;  // M x r
  std::vector<double> item_bias;
};

Dataset synth_stream(const SynthConfig& config, std::uint64_t seed, SynthTruth* truth = nullptr);

}  // namespace dips::data
