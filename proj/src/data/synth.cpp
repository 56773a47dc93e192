#include "dips/data/synth.hpp"

#include "dips/common/error.hpp"

#include <fmt/format.h>

#include <cmath>
#include <random>

namespace dips::data {

void SynthConfig::validate() const {
  if (num_users < 1 || num_items < 1 || length < 2 || rank < 1) {
    throw ConfigError("synth: users, items, rank must be positive and length >= 2");
  }
  if (num_anchor_items < anchors_per_user || anchors_per_user < 0) {
    throw ConfigError("synth: not enough anchor items for anchors_per_user");
  }
  if (anchors_per_user > length) throw ConfigError("synth: more anchors than stream length");
  if (num_items - num_anchor_items < length - anchors_per_user) {
    throw ConfigError("synth: too few filler items for the stream length");
  }
  if (anchor_noise < 0 || filler_noise < 0 || anchor_weight < 0) {
    throw ConfigError("synth: noise levels and anchor weight must be nonnegative");
  }
}

namespace {

// Draws `count` distinct indices from [begin, end) with probability
// proportional to exp(logits[j]), sequentially without replacement.
std::vector<Index> draw_without_replacement(const std::vector<double>& logits, Index begin,
                                            Index end, Index count, std::mt19937_64& rng) {
  std::vector<double> w(static_cast<std::size_t>(end - begin));
  double top = -INFINITY;
  for (Index j = begin; j < end; ++j) top = std::max(top, logits[j]);
  for (Index j = begin; j < end; ++j) w[j - begin] = std::exp(logits[j] - top);
  std::vector<Index> out;
  for (Index c = 0; c < count; ++c) {
    double total = 0.0;
    for (double x : w) total += x;
    std::uniform_real_distribution<double> unit(0.0, total);
    double r = unit(rng);
    Index pick = -1;
    for (Index i = 0; i < static_cast<Index>(w.size()); ++i) {
      if (w[i] <= 0) continue;
      pick = i;
      if (r < w[i]) break;
      r -= w[i];
    }
    out.push_back(begin + pick);
    w[pick] = 0.0;
  }
  return out;
}

}  // namespace

Dataset synth_stream(const SynthConfig& cfg, std::uint64_t seed, SynthTruth* truth) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index n = cfg.num_users, m = cfg.num_items, r = cfg.rank;

  SynthTruth t;
  t.user_factors.resize(n, r);
  t.item_factors.resize(m, r);
  t.item_bias.resize(m);
  const double q_scale = 1.0 / std::sqrt(double(r));
  for (Index j = 0; j < m; ++j) {
    for (Index k = 0; k < r; ++k) t.item_factors(j, k) = q_scale * normal(rng);
    t.item_bias[j] = cfg.item_bias_sd * normal(rng);
  }
  for (Index u = 0; u < n; ++u) {
    for (Index k = 0; k < r; ++k) t.user_factors(u, k) = normal(rng);
  }

  Dataset d;
  d.implicit = cfg.implicit;
  for (Index j = 0; j < m; ++j) d.catalog.add_item(fmt::format("i{}", j));
  const Index a_items = cfg.num_anchor_items;
  std::vector<double> affinity(m);
  for (Index u = 0; u < n; ++u) {
    UserStream s;
    s.user = d.catalog.add_user(fmt::format("u{}", u));
    for (Index j = 0; j < m; ++j) affinity[j] = t.user_factors.row(u).dot(t.item_factors.row(j));

    std::vector<Index> anchors, fillers;
    if (cfg.implicit) {
      std::vector<double> logits(m);
      for (Index j = 0; j < m; ++j) {
        const double sharp = j < a_items ? cfg.anchor_sharpness : cfg.filler_sharpness;
        logits[j] = cfg.anchor_weight * sharp * affinity[j];
      }
      anchors = draw_without_replacement(logits, 0, a_items, cfg.anchors_per_user, rng);
      fillers = draw_without_replacement(logits, a_items, m, cfg.length - cfg.anchors_per_user, rng);
    } else {
      const std::vector<double> flat(m, 0.0);
      anchors = draw_without_replacement(flat, 0, a_items, cfg.anchors_per_user, rng);
      fillers = draw_without_replacement(flat, a_items, m, cfg.length - cfg.anchors_per_user, rng);
    }
    std::int64_t step = 0;
    auto emit = [&](Index j, double noise_sd) {
      double rating = 1.0;
      if (!cfg.implicit) {
        rating = cfg.mean_rating + t.item_bias[j] + cfg.anchor_weight * affinity[j] +
                 noise_sd * normal(rng);
      }
      s.events.push_back({j, rating, ++step});
    };
    for (Index j : anchors) emit(j, cfg.anchor_noise);
    for (Index j : fillers) emit(j, cfg.filler_noise);
    d.streams.push_back(std::move(s));
  }
  if (truth) *truth = std::move(t);
  return d;
}

}  // namespace dips::data
