#include "dips/metrics/evaluate.hpp"

#include "dips/common/error.hpp"
#include "dips/common/parallel.hpp"
#include "dips/common/rng.hpp"
#include "dips/train/episode.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <ostream>

namespace dips::metrics {

std::string EvalRecord::to_json() const {
  nlohmann::ordered_json j;
  j["user"] = user;
  j["step"] = step;
  j["metric"] = metric;
  j["value"] = value;
  return j.dump();
}

std::map<std::string, double> aggregate(const std::vector<EvalRecord>& records, bool implicit,
                                        Index k) {
  std::map<std::string, double> out;
  if (records.empty()) return out;
  if (implicit) {
    std::vector<Index> ranks;
    for (const auto& r : records) {
      if (r.metric == "rank") ranks.push_back(static_cast<Index>(r.value));
    }
    out[fmt::format("recall@{}", k)] = recall_at_k(ranks, k);
    out[fmt::format("mrr@{}", k)] = mrr_at_k(ranks, k);
  } else {
    std::vector<std::pair<double, double>> pairs;
    for (const auto& r : records) {
      if (r.metric == "error") pairs.emplace_back(0.0, r.value);
    }
    out["rmse"] = rmse(pairs);
  }
  return out;
}

EvalResult evaluate(const train::TrainConfig& cfg, const train::TrainState& state,
                    const std::vector<data::UserStream>& users, Index num_items,
                    std::uint64_t seed, const EvalHooks& hooks) {
  cfg.validate();
  if (state.theta.dims.num_items != num_items) {
    throw ConfigError(fmt::format("model has {} items, data has {}", state.theta.dims.num_items,
                                  num_items));
  }
  const bool implicit = cfg.setting == rec::Setting::implicit_feedback;
  const train::StepOptions opt = train::StepOptions::evaluation(cfg);
  const policy::PolicyParams* phi = train::is_learned(cfg.policy) ? &state.phi : nullptr;

  std::vector<std::vector<EvalRecord>> per_user(users.size());
  parallel_for(users.size(), [&](std::size_t i) {
    const auto& s = users[i];
    if (s.events.size() < 2) return;
    // Epoch 0 is never used by training, so evaluation draws its own streams.
    train::Episode ep(s, cfg, num_items,
                      derive_seed({seed, 0, static_cast<std::uint64_t>(s.user) + 1}));
    auto& out = per_user[i];
    while (!ep.done()) {
      const train::StepResult r = ep.step(state.theta, phi, opt);
      if (implicit) {
        out.push_back({s.user, r.step, "rank", static_cast<double>(r.rank)});
      } else {
        out.push_back({s.user, r.step, "error", r.prediction - r.target});
      }
      if (hooks.on_step) hooks.on_step(s, r);
    }
  });

  EvalResult res;
  for (std::size_t i = 0; i < users.size(); ++i) {
    if (users[i].events.size() < 2) {
      ++res.skipped_users;
      continue;
    }
    ++res.users;
    res.records.insert(res.records.end(), per_user[i].begin(), per_user[i].end());
  }
  std::sort(res.records.begin(), res.records.end(), [](const EvalRecord& a, const EvalRecord& b) {
    return a.user != b.user ? a.user < b.user : a.step < b.step;
  });
  res.aggregates = aggregate(res.records, implicit);
  return res;
}

void write_table_csv(std::ostream& out, const std::vector<TableRow>& rows) {
  out << "policy,K,tau,metric,mean,std,n\n";
  for (const auto& r : rows) {
    out << fmt::format("{},{},{},{},{:.6f},{:.6f},{}\n", r.policy, r.K, r.tau, r.metric,
                       r.stats.mean, r.stats.std, r.stats.n);
  }
}

std::vector<TableRow> summarize(const std::string& policy, Index k, Index tau,
                                const std::vector<EvalResult>& per_seed) {
  std::map<std::string, std::vector<double>> values;
  for (const auto& r : per_seed) {
    for (const auto& [name, v] : r.aggregates) values[name].push_back(v);
  }
  std::vector<TableRow> rows;
  for (const auto& [name, v] : values) rows.push_back({policy, k, tau, name, mean_std(v)});
  return rows;
}

}  // namespace dips::metrics
