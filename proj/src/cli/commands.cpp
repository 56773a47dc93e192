#include "dips/cli/commands.hpp"

#include "dips/common/error.hpp"
#include "dips/common/params_io.hpp"
#include "dips/diag/gradients.hpp"
#include "dips/metrics/evaluate.hpp"
#include "dips/train/episode.hpp"
#include "dips/train/trainer.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

namespace dips::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

int exit_code(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    switch (err->kind()) {
      case ErrorKind::config: return kExitConfig;
      case ErrorKind::data: return kExitData;
      case ErrorKind::numerical: return kExitNumerical;
      case ErrorKind::invalid_argument: return kExitConfig;
    }
  }
  return kExitFailure;
}

namespace {

// Tracks the files a command writes, relative to the output directory.
class Manifest {
 public:
  Manifest(std::string command, const ExperimentConfig& cfg)
      : command_(std::move(command)), cfg_(&cfg), root_(cfg.out) {}

  fs::path path(const std::string& rel) {
    const fs::path p = root_ / rel;
    fs::create_directories(p.parent_path());
    files_.push_back(rel);
    return p;
  }
  void add_cell(const std::string& name) { cells_.push_back(name); }
  void add_external(const std::string& path) { external_.push_back(path); }

  void write() {
    json j;
    j["command"] = command_;
    json c = json::object();
    for (const auto& [k, v] : cfg_->resolved()) c[k] = v;
    j["config"] = c;
    j["cells"] = cells_;
    const std::string self = fmt::format("manifest.{}.json", command_);
    std::vector<std::string> files = files_;
    files.push_back(self);
    std::sort(files.begin(), files.end());
    j["files"] = files;
    if (!external_.empty()) j["external_files"] = external_;
    fs::create_directories(root_);
    std::ofstream out(root_ / self);
    out << j.dump(2) << '\n';
    if (!out) throw DataError(fmt::format("cannot write {}", (root_ / self).string()));
  }

 private:
  std::string command_;
  const ExperimentConfig* cfg_;
  fs::path root_;
  std::vector<std::string> files_;
  std::vector<std::string> cells_;
  std::vector<std::string> external_;
};

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw DataError(fmt::format("cannot write {}", p.string()));
  out.precision(17);
  return out;
}

bool implicit_of(const train::TrainConfig& c) {
  return c.setting == rec::Setting::implicit_feedback;
}

train::TrainState load_checkpoint(const fs::path& dir, const train::TrainConfig& cfg,
                                  Index num_items) {
  const fs::path tp = dir / "theta.params";
  const fs::path pp = dir / "phi.params";
  if (!fs::exists(tp) || !fs::exists(pp)) {
    throw DataError(fmt::format("no checkpoint in {}", dir.string()));
  }
  train::TrainState st;
  st.theta = rec::RecParams::from_param_file(read_params(tp.string()));
  st.phi = policy::PolicyParams::from_param_file(read_params(pp.string()));
  const auto& d = st.theta.dims;
  if (d.num_items != num_items || st.phi.num_items != num_items) {
    throw ConfigError(fmt::format("checkpoint {} has {} items, data has {}", dir.string(),
                                  d.num_items, num_items));
  }
  if (d.dim != cfg.dim || d.hidden != cfg.hidden || d.setting != cfg.setting ||
      st.phi.hidden != cfg.policy_hidden) {
    throw ConfigError(fmt::format(
        "checkpoint {} is d={} hidden={} {} policy_hidden={}, config asks d={} hidden={} {} "
        "policy_hidden={}",
        dir.string(), d.dim, d.hidden, rec::to_string(d.setting), st.phi.hidden, cfg.dim,
        cfg.hidden, rec::to_string(cfg.setting), cfg.policy_hidden));
  }
  return st;
}

template <class Fn>
void run_cells(std::size_t n, int jobs, Fn&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min<int>(jobs, static_cast<int>(n)); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!first) first = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

}  // namespace

int cmd_train(const ExperimentConfig& cfg, std::ostream& log, int jobs) {
  cfg.validate();
  const ExperimentData data = load_experiment_data(cfg);
  const Index m = data.full.num_items();
  const auto cells = cfg.cells();
  log << fmt::format("data: {} users ({} train, {} valid, {} test), {} items\n",
                     data.full.num_users(), data.split.train.size(), data.split.valid.size(),
                     data.split.test.size(), m);

  std::vector<train::TrainResult> results(cells.size());
  std::mutex log_mu;
  run_cells(cells.size(), jobs, [&](std::size_t i) {
    const auto& cell = cells[i];
    train::TrainHooks hooks;
    hooks.warn = [&](const std::string& w) {
      std::lock_guard lock(log_mu);
      log << "warning: " << cell.name << ": " << w << '\n';
    };
    hooks.validate = [&](Index epoch, const train::TrainState& st) {
      std::vector<train::MetricRecord> recs;
      if (data.split.valid.empty()) return recs;
      const auto r = metrics::evaluate(cell.cfg, st, data.split.valid, m, cell.cfg.seed);
      for (const auto& [name, v] : r.aggregates) {
        recs.push_back({epoch, "valid", name, v, cell.cfg.K, cell.cfg.update_period(),
                        to_string(cell.cfg.policy), cell.cfg.seed});
      }
      return recs;
    };
    results[i] = train::train(cell.cfg, data.split.train, m, hooks);
    std::lock_guard lock(log_mu);
    log << fmt::format("{}: {} recommender updates, {} policy updates\n", cell.name,
                       results[i].theta_updates, results[i].policy_updates);
    for (const auto& r : results[i].log) {
      log << fmt::format("  epoch {} {} {} = {:.6f}\n", r.epoch, r.split, r.metric, r.value);
    }
  });

  Manifest man("train", cfg);
  for (const auto& f : data.written) man.add_external(f);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& cell = cells[i];
    man.add_cell(cell.name);
    write_params(man.path(cell.name + "/theta.params").string(),
                 results[i].state.theta.to_param_file());
    write_params(man.path(cell.name + "/phi.params").string(),
                 results[i].state.phi.to_param_file());
    auto out = open_out(man.path(cell.name + "/metrics.jsonl"));
    train::write_metric_log(out, results[i].log);
  }
  man.write();
  return kExitOk;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_dir, std::ostream& log) {
  cfg.validate();
  const ExperimentData data = load_experiment_data(cfg);
  const Index m = data.full.num_items();
  const auto cells = cfg.cells();
  if (data.split.test.empty()) throw DataError("the test split is empty");

  // Load every checkpoint before writing anything.
  std::vector<train::TrainState> states;
  for (const auto& cell : cells) {
    states.push_back(load_checkpoint(fs::path(checkpoint_dir) / cell.name, cell.cfg, m));
  }

  Manifest man("eval", cfg);
  std::map<std::tuple<std::string, Index, Index>, std::vector<metrics::EvalResult>> groups;
  std::vector<std::tuple<std::string, Index, Index>> order;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& cell = cells[i];
    man.add_cell(cell.name);
    auto r = metrics::evaluate(cell.cfg, states[i], data.split.test, m, cell.cfg.seed);
    for (const auto& [name, v] : r.aggregates) {
      log << fmt::format("{}: test {} = {:.6f}\n", cell.name, name, v);
    }
    if (cfg.eval_records) {
      auto out = open_out(man.path("eval/" + cell.name + ".jsonl"));
      for (const auto& rec : r.records) out << rec.to_json() << '\n';
    }
    r.records.clear();
    const auto key = std::make_tuple(to_string(cell.cfg.policy), cell.cfg.K,
                                     cell.cfg.update_period());
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(std::move(r));
  }
  std::vector<metrics::TableRow> rows;
  for (const auto& key : order) {
    const auto part = metrics::summarize(std::get<0>(key), std::get<1>(key), std::get<2>(key),
                                         groups[key]);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  {
    auto out = open_out(man.path("table.csv"));
    metrics::write_table_csv(out, rows);
  }
  for (const auto& r : rows) {
    log << fmt::format("{:<10} K={:<3} tau={:<3} {:<10} {:.4f} +- {:.4f} (n={})\n", r.policy, r.K,
                       r.tau, r.metric, r.stats.mean, r.stats.std, r.stats.n);
  }
  man.write();
  return kExitOk;
}

int cmd_gradcheck(std::ostream& log, const diag::GradcheckOptions& options) {
  const auto results = diag::run_gradchecks(options);
  int failed = 0;
  for (const auto& r : results) {
    log << fmt::format("{} {:<34} error {:.3e}  tolerance {:.0e}{}\n", r.passed ? "PASS" : "FAIL",
                       r.name, r.error, r.tolerance, r.message.empty() ? "" : "  " + r.message);
    failed += r.passed ? 0 : 1;
  }
  log << fmt::format("{} checks, {} failed\n", results.size(), failed);
  return failed == 0 ? kExitOk : kExitNumerical;
}

int cmd_diagnose(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const auto cells = cfg.cells();
  for (const auto& cell : cells) {
    if (!train::is_learned(cell.cfg.policy)) {
      throw ConfigError(fmt::format("diagnose needs learned policies; cell {} uses {}", cell.name,
                                    to_string(cell.cfg.policy)));
    }
  }
  const ExperimentData data = load_experiment_data(cfg);
  const Index m = data.full.num_items();
  std::vector<diag::DiagnoseResult> results;
  for (const auto& cell : cells) {
    results.push_back(diag::diagnose(cell.cfg, data.split.train, m, cfg.diagnose));
    for (const std::string method : {"dips", "dips1"}) {
      const auto s = diag::mean_report(results.back().records, method);
      log << fmt::format(
          "{} {:<5}: preserved {:.3f} negated {:.3f} zeroed {:.3f} spurious {:.3f} cosine {:.3f}\n",
          cell.name, method, s.preserved, s.negated, s.zeroed, s.spurious, s.cosine);
    }
  }
  Manifest man("diagnose", cfg);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    man.add_cell(cells[i].name);
    auto out = open_out(man.path("diagnose/" + cells[i].name + ".jsonl"));
    diag::write_probe_log(out, results[i].records);
  }
  man.write();
  return kExitOk;
}

int cmd_dump_trace(const ExperimentConfig& cfg, const std::string& checkpoint_dir,
                   const std::string& cell_name, Index user, std::ostream& out) {
  cfg.validate();
  const auto cells = cfg.cells();
  const Cell* cell = &cells.front();
  if (!cell_name.empty()) {
    auto it = std::find_if(cells.begin(), cells.end(),
                           [&](const Cell& c) { return c.name == cell_name; });
    if (it == cells.end()) throw ConfigError(fmt::format("no cell named '{}'", cell_name));
    cell = &*it;
  }
  const ExperimentData data = load_experiment_data(cfg);
  const Index m = data.full.num_items();
  if (user < 0 || user >= data.full.num_users()) {
    throw ConfigError(fmt::format("user {} outside [0, {})", user, data.full.num_users()));
  }
  const auto& stream = data.full.streams[static_cast<std::size_t>(user)];
  if (stream.events.size() < 2) throw DataError(fmt::format("user {} has too few events", user));
  const train::TrainState st = load_checkpoint(fs::path(checkpoint_dir) / cell->name, cell->cfg, m);

  const train::StepOptions opt = train::StepOptions::evaluation(cell->cfg);
  train::Episode ep(stream, cell->cfg, m, cell->cfg.seed);
  const policy::PolicyParams* phi = train::is_learned(cell->cfg.policy) ? &st.phi : nullptr;
  auto raw = [&](Index item) { return data.full.catalog.item_ids[static_cast<std::size_t>(item)]; };
  while (!ep.done()) {
    const train::StepResult r = ep.step(st.theta, phi, opt);
    json j;
    j["user"] = data.full.catalog.user_ids[static_cast<std::size_t>(user)];
    j["step"] = r.step;
    j["incoming"] = raw(r.trace.incoming);
    j["selected"] = r.trace.selected;
    std::vector<std::string> removed, sketch;
    for (Index i : r.trace.removed) removed.push_back(raw(i));
    for (Index i : r.trace.sketch) sketch.push_back(raw(i));
    j["removed"] = removed;
    j["sketch"] = sketch;
    j["next"] = raw(r.trace.next_item);
    if (implicit_of(cell->cfg)) {
      j["rank"] = r.rank;
    } else {
      j["prediction"] = r.prediction;
      j["target"] = r.target;
    }
    j["success"] = r.trace.success;
    out << j.dump() << '\n';
  }
  return kExitOk;
}

}  // namespace dips::cli
