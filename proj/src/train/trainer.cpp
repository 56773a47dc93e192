#include "dips/train/trainer.hpp"

#include "dips/common/error.hpp"
#include "dips/common/parallel.hpp"
#include "dips/common/rng.hpp"
#include "dips/train/optim.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

namespace dips::train {

using json = nlohmann::ordered_json;

std::string MetricRecord::to_json() const {
  json j;
  j["epoch"] = epoch;
  j["split"] = split;
  j["metric"] = metric;
  j["value"] = value;
  j["K"] = K;
  j["tau"] = tau;
  j["policy"] = policy;
  j["seed"] = seed;
  return j.dump();
}

MetricRecord MetricRecord::from_json(const std::string& line) {
  try {
    const json j = json::parse(line);
    MetricRecord r;
    r.epoch = j.at("epoch").get<Index>();
    r.split = j.at("split").get<std::string>();
    r.metric = j.at("metric").get<std::string>();
    r.value = j.at("value").get<double>();
    r.K = j.at("K").get<Index>();
    r.tau = j.at("tau").get<Index>();
    r.policy = j.at("policy").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    return r;
  } catch (const json::exception& e) {
    throw DataError(fmt::format("bad metric record: {}", e.what()));
  }
}

void write_metric_log(std::ostream& out, const std::vector<MetricRecord>& records) {
  for (const auto& r : records) out << r.to_json() << '\n';
}

TrainState init_state(const TrainConfig& cfg, Index num_items) {
  cfg.validate();
  TrainState s;
  s.theta = rec::RecParams::init(cfg.model_dims(num_items), derive_seed({cfg.seed, 1}));
  s.phi = policy::PolicyParams::init(num_items, derive_seed({cfg.seed, 2}), cfg.policy_hidden,
                                     cfg.policy_dropout);
  return s;
}

std::uint64_t item_side_checksum(const rec::RecParams& theta) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& t : theta.item_side()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.value().data());
    const std::size_t n = static_cast<std::size_t>(t.size()) * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

namespace {

// Adds b into a, allocating on first use.
void accumulate(std::vector<Matrix>& acc, const std::vector<Matrix>& g) {
  if (acc.empty()) {
    acc = g;
    return;
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

void check_state(const TrainState& s, const TrainConfig& cfg, Index num_items) {
  const auto& d = s.theta.dims;
  if (d.num_items != num_items || s.phi.num_items != num_items) {
    throw ConfigError(fmt::format("parameters are for {} items, data has {}", d.num_items,
                                  num_items));
  }
  if (d.dim != cfg.dim || d.hidden != cfg.hidden || d.setting != cfg.setting ||
      d.loss != cfg.loss) {
    throw ConfigError("recommender parameters do not match the configured model");
  }
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<data::UserStream>& users,
                  Index num_items, const TrainHooks& hooks, std::optional<TrainState> init) {
  cfg.validate();
  TrainResult result;
  result.state = init ? std::move(*init) : init_state(cfg, num_items);
  TrainState& st = result.state;
  check_state(st, cfg, num_items);

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < users.size(); ++i) {
    if (users[i].events.size() >= 2) {
      eligible.push_back(i);
    } else {
      ++result.skipped_users;
      if (hooks.warn) {
        hooks.warn(fmt::format("user {} has {} interaction(s); skipped", users[i].user,
                               users[i].events.size()));
      }
    }
  }

  SgdMomentum user_opt(cfg.lr_user, cfg.momentum, cfg.weight_decay);
  Adam item_opt(cfg.lr_item, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay);
  Adam policy_opt(cfg.lr_policy, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay);

  const bool learned = is_learned(cfg.policy);
  StepOptions opt = StepOptions::training(cfg);
  opt.want_v = learned;
  opt.policy_grads = learned;
  const policy::PolicyParams* phi = learned ? &st.phi : nullptr;

  for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = eligible;
    std::mt19937_64 shuffle_rng(derive_seed({cfg.seed, static_cast<std::uint64_t>(epoch), 0}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    Index loss_n = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Episode> episodes;
      episodes.reserve(b1 - b0);
      for (std::size_t i = b0; i < b1; ++i) {
        const auto& s = users[order[i]];
        episodes.emplace_back(s, cfg, num_items,
                              derive_seed({cfg.seed, static_cast<std::uint64_t>(epoch),
                                           static_cast<std::uint64_t>(s.user) + 1}));
      }
      Index max_steps = 0;
      for (const auto& e : episodes) max_steps = std::max(max_steps, e.num_steps());

      std::vector<std::size_t> active;
      std::vector<StepResult> results;
      for (Index t = 1; t <= max_steps; ++t) {
        active.clear();
        for (std::size_t i = 0; i < episodes.size(); ++i) {
          if (!episodes[i].done()) active.push_back(i);
        }
        results.assign(active.size(), StepResult{});
        parallel_for(active.size(), [&](std::size_t i) {
          results[i] = episodes[active[i]].step(st.theta, phi, opt);
        });

        std::vector<Matrix> theta_sum, phi_sum;
        Index phi_n = 0;
        for (std::size_t i = 0; i < active.size(); ++i) {
          const StepResult& r = results[i];
          if (!std::isfinite(r.loss)) {
            throw NumericalError(fmt::format("epoch {}: user {} step {} has loss {}", epoch,
                                             episodes[active[i]].user(), r.step, r.loss));
          }
          if (hooks.on_step) hooks.on_step(static_cast<Index>(active[i]), episodes[active[i]], r, st);
          loss_sum += r.loss;
          ++loss_n;
          accumulate(theta_sum, r.theta_grads);
          if (!r.phi_grads.empty()) {
            accumulate(phi_sum, r.phi_grads);
            ++phi_n;
          }
        }
        if (!active.empty()) {
          const double scale = 1.0 / static_cast<double>(active.size());
          for (auto& g : theta_sum) g *= scale;
          std::vector<Tensor> user_param{st.theta.user};
          std::vector<Matrix> user_grad{theta_sum[0]};
          user_opt.step(user_param, user_grad);
          std::vector<Tensor> item_params = st.theta.item_side();
          std::vector<Matrix> item_grads(theta_sum.begin() + 1, theta_sum.end());
          item_opt.step(item_params, item_grads);
          ++result.theta_updates;
        }
        if (phi_n > 0) {
          for (auto& g : phi_sum) g *= 1.0 / static_cast<double>(phi_n);
          std::vector<Tensor> phi_params = st.phi.all();
          policy_opt.step(phi_params, phi_sum);
          ++result.policy_updates;
        }
      }
    }
    const std::string pol = to_string(cfg.policy);
    if (loss_n > 0) {
      result.log.push_back({epoch, "train", "loss", loss_sum / static_cast<double>(loss_n), cfg.K,
                            cfg.update_period(), pol, cfg.seed});
    }
    if (hooks.validate) {
      for (auto& r : hooks.validate(epoch, st)) result.log.push_back(std::move(r));
    }
  }
  return result;
}

}  // namespace dips::train
