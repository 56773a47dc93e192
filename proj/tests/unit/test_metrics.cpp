#include "dips/common/error.hpp"
#include "dips/data/synth.hpp"
#include "dips/metrics/evaluate.hpp"
#include "dips/metrics/metrics.hpp"
#include "dips/train/trainer.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

using namespace dips;
using namespace dips::metrics;

namespace {

train::TrainConfig eval_config(train::PolicyKind kind, bool implicit) {
  train::TrainConfig c;
  if (implicit) c.set("setting", "implicit");
  c.policy = kind;
  c.K = 3;
  c.dim = 4;
  c.hidden = 8;
  c.policy_hidden = 16;
  c.inner_steps = 3;
  c.seed = 5;
  return c;
}

data::Dataset eval_data(bool implicit, Index users = 15) {
  data::SynthConfig s;
  s.num_users = users;
  s.num_items = 40;
  s.length = 10;
  s.num_anchor_items = 8;
  s.anchors_per_user = 2;
  s.rank = 2;
  s.implicit = implicit;
  return data::synth_stream(s, 17);
}

// Every user sees a uniformly random sequence of distinct items.
data::Dataset uniform_streams(Index users, Index items, Index length, std::uint64_t seed) {
  data::Dataset d;
  d.implicit = true;
  for (Index j = 0; j < items; ++j) d.catalog.add_item(std::to_string(j));
  std::mt19937_64 rng(seed);
  std::vector<Index> perm(static_cast<std::size_t>(items));
  for (Index u = 0; u < users; ++u) {
    d.catalog.add_user(std::to_string(u));
    std::iota(perm.begin(), perm.end(), Index(0));
    std::shuffle(perm.begin(), perm.end(), rng);
    data::UserStream s;
    s.user = u;
    for (Index t = 0; t < length; ++t) s.events.push_back({perm[t], 1.0, t});
    d.streams.push_back(std::move(s));
  }
  return d;
}

}  // namespace

TEST_CASE("rmse: closed forms and the direct formula") {
  const std::vector<std::pair<double, double>> exact{{1, 1}, {2, 2}, {5, 5}};
  CHECK(rmse(exact) == 0.0);
  const std::vector<std::pair<double, double>> offset{{1, 2}, {3, 2}, {0, 1}};
  CHECK(rmse(offset) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(rmse({}), InvalidArgument);

  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(3.0, 1.0);
  for (int c = 0; c < 200; ++c) {
    const std::size_t n = 1 + rng() % 50;
    std::vector<std::pair<double, double>> p(n);
    long double s = 0;
    for (auto& [a, b] : p) {
      a = g(rng);
      b = g(rng);
      s += static_cast<long double>(a - b) * (a - b);
    }
    const double direct = static_cast<double>(std::sqrt(s / n));
    CHECK(std::abs(rmse(p) - direct) <= 1e-12);
    CHECK(rmse(p) >= 0.0);
  }
}

TEST_CASE("rank_of: ties are pessimistic and counting oracle agrees") {
  const std::vector<double> s{0.1, 0.9, 0.3, 0.5};
  CHECK(rank_of(1, s) == 1);
  CHECK(rank_of(0, s) == 4);
  const std::vector<double> flat(10, 2.0);
  CHECK(rank_of(0, flat) == 10);
  CHECK(rank_of(7, flat) == 10);
  CHECK_THROWS_AS(rank_of(4, s), InvalidArgument);
  CHECK_THROWS_AS(rank_of(-1, s), InvalidArgument);
  const std::vector<std::uint8_t> ex{0, 1, 0, 1};
  CHECK(rank_of(0, s, ex) == 2);

  std::mt19937_64 rng(2);
  for (int c = 0; c < 300; ++c) {
    const Index m = 1 + static_cast<Index>(rng() % 60);
    std::vector<double> sc(static_cast<std::size_t>(m));
    // Coarse values so ties are common.
    for (auto& x : sc) x = static_cast<double>(rng() % 7);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(m));
    for (auto& b : mask) b = rng() % 4 == 0;
    const Index target = static_cast<Index>(rng() % m);
    Index ge = 0, ge_kept = 0;
    for (Index j = 0; j < m; ++j) {
      if (j == target) continue;
      if (sc[j] >= sc[target]) {
        ++ge;
        if (!mask[j]) ++ge_kept;
      }
    }
    CHECK(rank_of(target, sc) == ge + 1);
    CHECK(rank_of(target, sc, mask) == ge_kept + 1);
  }
}

TEST_CASE("recall and mrr: boundaries, formulas and ordering") {
  const std::vector<Index> ones(5, 1);
  CHECK(recall_at_k(ones) == 1.0);
  CHECK(mrr_at_k(ones) == 1.0);
  const std::vector<Index> r21{21};
  CHECK(recall_at_k(r21, 20) == 0.0);
  CHECK(mrr_at_k(r21, 20) == 0.0);
  const std::vector<Index> r2{2};
  CHECK(mrr_at_k(r2) == 0.5);
  CHECK_THROWS_AS(recall_at_k({}), InvalidArgument);
  CHECK_THROWS_AS(mrr_at_k({}), InvalidArgument);

  std::mt19937_64 rng(3);
  for (int c = 0; c < 250; ++c) {
    const std::size_t n = 1 + rng() % 40;
    std::vector<Index> ranks(n);
    for (auto& r : ranks) r = 1 + static_cast<Index>(rng() % 60);
    const Index k = 1 + static_cast<Index>(rng() % 40);
    Index hit = 0;
    double rr = 0;
    for (Index r : ranks) {
      if (r <= k) {
        ++hit;
        rr += 1.0 / static_cast<double>(r);
      }
    }
    const double rec = recall_at_k(ranks, k);
    const double mrr = mrr_at_k(ranks, k);
    CHECK(rec == static_cast<double>(hit) / static_cast<double>(n));
    CHECK(std::abs(mrr - rr / static_cast<double>(n)) <= 1e-15);
    CHECK(rec >= 0.0);
    CHECK(rec <= 1.0);
    CHECK(mrr >= 0.0);
    CHECK(mrr <= rec);
    CHECK(recall_at_k(ranks, k + 1) >= rec);
  }
}

TEST_CASE("mean_std: sample standard deviation") {
  const std::vector<double> v{1, 2, 3, 4};
  const MeanStd m = mean_std(v);
  CHECK(m.mean == 2.5);
  CHECK(m.std == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(m.n == 4);
  const std::vector<double> one{7};
  CHECK(mean_std(one).std == 0.0);
}

TEST_CASE("evaluate: aggregates equal recomputation from the records") {
  for (bool implicit : {false, true}) {
    for (auto kind : {train::PolicyKind::random, train::PolicyKind::dips}) {
      const auto cfg = eval_config(kind, implicit);
      const auto d = eval_data(implicit);
      const auto st = train::init_state(cfg, d.num_items());
      const EvalResult r = evaluate(cfg, st, d.streams, d.num_items(), 3);
      CHECK(r.users == d.num_users());
      CHECK(r.records.size() == d.num_interactions() - d.streams.size());
      if (implicit) {
        std::vector<Index> ranks;
        for (const auto& e : r.records) ranks.push_back(static_cast<Index>(e.value));
        CHECK(r.aggregates.at("recall@20") == recall_at_k(ranks));
        CHECK(r.aggregates.at("mrr@20") == mrr_at_k(ranks));
      } else {
        double s = 0;
        for (const auto& e : r.records) s += e.value * e.value;
        CHECK(r.aggregates.at("rmse") ==
              doctest::Approx(std::sqrt(s / static_cast<double>(r.records.size()))).epsilon(1e-14));
      }
    }
  }
}

TEST_CASE("evaluate: deterministic, order-invariant and read-only") {
  std::mt19937_64 rng(9);
  for (bool implicit : {false, true}) {
    const auto cfg = eval_config(train::PolicyKind::random, implicit);
    const auto d = eval_data(implicit);
    const auto st = train::init_state(cfg, d.num_items());
    const auto theta0 = st.theta.clone();
    const EvalResult a = evaluate(cfg, st, d.streams, d.num_items(), 4);
    const EvalResult b = evaluate(cfg, st, d.streams, d.num_items(), 4);
    CHECK(a.aggregates == b.aggregates);
    auto shuffled = d.streams;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const EvalResult c = evaluate(cfg, st, shuffled, d.num_items(), 4);
    CHECK(a.aggregates == c.aggregates);
    const auto all0 = theta0.all();
    const auto all1 = st.theta.all();
    for (std::size_t i = 0; i < all0.size(); ++i) CHECK(all0[i].value() == all1[i].value());
  }
}

TEST_CASE("evaluate: untrained model on symmetric data ranks at chance") {
  auto cfg = eval_config(train::PolicyKind::random, true);
  const Index m = 100;
  const auto d = uniform_streams(300, m, 15, 21);
  const auto st = train::init_state(cfg, m);
  const EvalResult r = evaluate(cfg, st, d.streams, m, 1);
  const double n = static_cast<double>(r.records.size());
  const double p = 20.0 / static_cast<double>(m);
  // Records of one user share an embedding, so allow a few times the
  // independent-trials standard error.
  CHECK(std::abs(r.aggregates.at("recall@20") - p) < 5 * std::sqrt(p * (1 - p) / n));
}

TEST_CASE("evaluate: mismatched model is rejected") {
  const auto cfg = eval_config(train::PolicyKind::random, false);
  const auto d = eval_data(false);
  const auto st = train::init_state(cfg, d.num_items() + 1);
  CHECK_THROWS_AS(evaluate(cfg, st, d.streams, d.num_items(), 1), ConfigError);
}

TEST_CASE("tables: one row per metric with mean, std and count over seeds") {
  std::vector<EvalResult> runs(5);
  for (int s = 0; s < 5; ++s) runs[s].aggregates = {{"rmse", 1.0 + s}};
  const auto rows = summarize("dips", 4, 1, runs);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].stats.n == 5);
  CHECK(rows[0].stats.mean == 3.0);
  std::ostringstream out;
  write_table_csv(out, rows);
  CHECK(out.str() == "policy,K,tau,metric,mean,std,n\ndips,4,1,rmse,3.000000,1.581139,5\n");
}
