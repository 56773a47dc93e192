#include "dips/diag/gradients.hpp"

#include "dips/common/error.hpp"
#include "dips/train/episode.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <ostream>

namespace dips::diag {

namespace {

void check_limits(const data::UserStream& s, Index num_items, const ReplayLimits& limits) {
  if (num_items > limits.max_items) {
    throw ConfigError(fmt::format("replay limited to {} items, instance has {}", limits.max_items,
                                  num_items));
  }
  if (s.length() > limits.max_length) {
    throw ConfigError(fmt::format("replay limited to streams of {} interactions, user {} has {}",
                                  limits.max_length, s.user, s.length()));
  }
}

bool all_zero(const std::vector<Matrix>& g) {
  for (const auto& m : g) {
    if (m.size() > 0 && m.cwiseAbs().maxCoeff() != 0.0) return false;
  }
  return true;
}

}  // namespace

std::vector<Matrix> replay_policy_grad(const std::vector<train::SelectionEntry>& history,
                                       const policy::PolicyParams& phi, const Matrix& v_all) {
  std::vector<const train::SelectionEntry*> entries;
  for (const auto& e : history) entries.push_back(&e);
  const std::vector<const policy::DropoutMasks*> masks(entries.size(), nullptr);
  return train::surrogate_policy_grad(entries, masks, phi, v_all);
}

ReplayGradient true_policy_grad(const data::UserStream& stream, Index step,
                                const train::TrainConfig& cfg, const train::TrainState& state,
                                const ReplayLimits& limits) {
  if (!train::is_learned(cfg.policy)) {
    throw ConfigError(fmt::format("replay needs a learned policy, got {}", to_string(cfg.policy)));
  }
  const Index m = state.phi.num_items;
  check_limits(stream, m, limits);
  if (step < 1 || step >= stream.length()) {
    throw InvalidArgument(fmt::format("replay step {} outside [1, {}]", step, stream.length() - 1));
  }
  train::TrainConfig rc = cfg;
  rc.queue = 0;

  train::StepOptions walk;
  walk.phase = train::Phase::eval;
  walk.select = policy::SelectMode::deterministic;
  walk.dropout = false;
  walk.want_v = false;
  walk.policy_grads = false;
  walk.keep_history = true;
  train::StepOptions last = walk;
  last.phase = train::Phase::train;
  last.want_v = true;

  train::Episode ep(stream, rc, m, 0);
  while (ep.next_step() < step) ep.step(state.theta, &state.phi, walk);
  const train::StepResult r = ep.step(state.theta, &state.phi, last);

  ReplayGradient out;
  if (!r.learned_selection) {
    for (const auto& p : state.phi.all()) out.grads.push_back(Matrix::Zero(p.rows(), p.cols()));
    return out;
  }
  out.v = r.v;
  out.selections = static_cast<Index>(ep.history().size());
  out.grads = replay_policy_grad(ep.history(), state.phi, r.v);
  return out;
}

GradReport direction_stats(const std::vector<Matrix>& approx, const std::vector<Matrix>& truth,
                           double eps) {
  if (approx.size() != truth.size()) {
    throw InvalidArgument(fmt::format("direction_stats: {} vs {} gradient blocks", approx.size(),
                                      truth.size()));
  }
  GradReport r;
  Index preserved = 0, negated = 0, zeroed = 0, spurious = 0;
  double dot = 0.0, na = 0.0, nt = 0.0;
  for (std::size_t b = 0; b < truth.size(); ++b) {
    const Matrix& a = approx[b];
    const Matrix& t = truth[b];
    if (a.rows() != t.rows() || a.cols() != t.cols()) {
      throw InvalidArgument(fmt::format("direction_stats: block {} is {}x{} vs {}x{}", b, a.rows(),
                                        a.cols(), t.rows(), t.cols()));
    }
    for (Index i = 0; i < t.size(); ++i) {
      const double x = a.data()[i];
      const double y = t.data()[i];
      dot += x * y;
      na += x * x;
      nt += y * y;
      if (std::abs(y) > eps) {
        ++r.nonzero;
        if (std::abs(x) <= eps) ++zeroed;
        else if ((x > 0) == (y > 0)) ++preserved;
        else ++negated;
      } else {
        ++r.zero;
        if (std::abs(x) > eps) ++spurious;
      }
    }
  }
  if (r.nonzero == 0) throw InvalidArgument("direction_stats: the true gradient is zero");
  const double n = static_cast<double>(r.nonzero);
  r.preserved = static_cast<double>(preserved) / n;
  r.negated = static_cast<double>(negated) / n;
  r.zeroed = static_cast<double>(zeroed) / n;
  r.spurious = r.zero > 0 ? static_cast<double>(spurious) / static_cast<double>(r.zero) : 0.0;
  r.cosine = na > 0 ? dot / std::sqrt(na * nt) : 0.0;
  return r;
}

std::string ProbeRecord::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["user"] = user;
  j["step"] = step;
  j["method"] = method;
  j["preserved"] = report.preserved;
  j["negated"] = report.negated;
  j["zeroed"] = report.zeroed;
  j["spurious"] = report.spurious;
  j["cosine"] = report.cosine;
  j["nonzero"] = report.nonzero;
  return j.dump();
}

void write_probe_log(std::ostream& out, const std::vector<ProbeRecord>& records) {
  for (const auto& r : records) out << r.to_json() << '\n';
}

GradReport mean_report(const std::vector<ProbeRecord>& records, const std::string& method) {
  GradReport m;
  Index n = 0;
  for (const auto& r : records) {
    if (r.method != method) continue;
    m.preserved += r.report.preserved;
    m.negated += r.report.negated;
    m.zeroed += r.report.zeroed;
    m.spurious += r.report.spurious;
    m.cosine += r.report.cosine;
    m.nonzero += r.report.nonzero;
    m.zero += r.report.zero;
    ++n;
  }
  if (n == 0) return m;
  const double k = 1.0 / static_cast<double>(n);
  m.preserved *= k;
  m.negated *= k;
  m.zeroed *= k;
  m.spurious *= k;
  m.cosine *= k;
  return m;
}

DiagnoseResult diagnose(train::TrainConfig cfg, const std::vector<data::UserStream>& users,
                        Index num_items, const DiagnoseOptions& options) {
  if (!train::is_learned(cfg.policy)) {
    throw ConfigError(fmt::format("diagnose needs policy dips or dips1, got {}",
                                  to_string(cfg.policy)));
  }
  for (const auto& s : users) check_limits(s, num_items, options.limits);
  cfg.train_select = policy::SelectMode::deterministic;
  cfg.policy_grad_dropout = false;

  DiagnoseResult res;
  Index epoch = 1;
  Index probes = 0;
  train::TrainHooks hooks;
  hooks.validate = [&](Index, const train::TrainState&) {
    ++epoch;
    return std::vector<train::MetricRecord>{};
  };
  hooks.on_step = [&](Index pos, const train::Episode& ep, const train::StepResult& r,
                      const train::TrainState& st) {
    if (pos >= options.probe_users || r.phi_grads.empty() || probes >= options.max_probes) return;
    const ReplayGradient truth = true_policy_grad(ep.stream(), r.step, cfg, st, options.limits);
    if (all_zero(truth.grads)) {
      ++res.skipped_probes;
      return;
    }
    const train::SelectionEntry* cur[] = {&*ep.last_selection()};
    const policy::DropoutMasks* none[] = {nullptr};
    const auto current_only = train::surrogate_policy_grad(cur, none, st.phi, r.v);
    res.records.push_back(
        {epoch, ep.user(), r.step, "dips", direction_stats(r.phi_grads, truth.grads)});
    res.records.push_back(
        {epoch, ep.user(), r.step, "dips1", direction_stats(current_only, truth.grads)});
    ++probes;
  };
  res.training = train::train(cfg, users, num_items, hooks);
  return res;
}

}  // namespace dips::diag
