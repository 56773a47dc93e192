#include "dips/cli/experiment.hpp"

#include "dips/common/error.hpp"
#include "dips/data/cache.hpp"

#include <fmt/format.h>

#include <filesystem>
#include <set>
#include <sstream>

namespace dips::cli {

namespace {

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ConfigError(fmt::format("empty entry in list '{}'", value));
    out.push_back(item.substr(b, e - b + 1));
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

template <class T, class F>
std::vector<T> parse_list(const std::string& value, F&& one) {
  std::vector<T> out;
  for (const auto& s : split_list(value)) out.push_back(one(s));
  return out;
}

std::string join(const auto& values, auto&& str) {
  std::string out;
  for (const auto& v : values) {
    if (!out.empty()) out += ",";
    out += str(v);
  }
  return out;
}

bool set_synth(data::SynthConfig& s, const std::string& field, const std::string& v) {
  using train::parse_double;
  using train::parse_index;
  const std::string key = "synth." + field;
  if (field == "num_users") s.num_users = parse_index(key, v);
  else if (field == "num_items") s.num_items = parse_index(key, v);
  else if (field == "length") s.length = parse_index(key, v);
  else if (field == "num_anchor_items") s.num_anchor_items = parse_index(key, v);
  else if (field == "anchors_per_user") s.anchors_per_user = parse_index(key, v);
  else if (field == "rank") s.rank = parse_index(key, v);
  else if (field == "anchor_weight") s.anchor_weight = parse_double(key, v);
  else if (field == "mean_rating") s.mean_rating = parse_double(key, v);
  else if (field == "item_bias_sd") s.item_bias_sd = parse_double(key, v);
  else if (field == "anchor_noise") s.anchor_noise = parse_double(key, v);
  else if (field == "filler_noise") s.filler_noise = parse_double(key, v);
  else if (field == "anchor_sharpness") s.anchor_sharpness = parse_double(key, v);
  else if (field == "filler_sharpness") s.filler_sharpness = parse_double(key, v);
  else return false;
  return true;
}

void apply(ExperimentConfig& c, const std::string& key, const std::string& v) {
  using train::parse_bool;
  using train::parse_index;
  using train::parse_u64;
  if (key == "policy") {
    c.policies = parse_list<train::PolicyKind>(v, train::parse_policy);
  } else if (key == "K") {
    c.Ks = parse_list<Index>(v, [&](const std::string& s) { return parse_index(key, s); });
  } else if (key == "tau") {
    c.taus = parse_list<Index>(v, [&](const std::string& s) { return parse_index(key, s); });
  } else if (key == "seed") {
    c.seeds = parse_list<std::uint64_t>(v, [&](const std::string& s) { return parse_u64(key, s); });
  } else if (key == "out") {
    c.out = v;
  } else if (key == "dataset") {
    c.data.source = v;
  } else if (key == "format") {
    c.data.from_cache = v == "cache";
    if (!c.data.from_cache) c.data.format = data::parse_format(v);
  } else if (key == "min_user_ratings") {
    c.data.min_user_ratings = parse_index(key, v);
  } else if (key == "implicit_threshold") {
    c.data.implicit_threshold = train::parse_double(key, v);
  } else if (key == "k_core") {
    c.data.k_core = parse_index(key, v);
  } else if (key == "cache") {
    c.data.cache = v;
  } else if (key == "split_seed") {
    c.data.split.seed = parse_u64(key, v);
  } else if (key == "synth.seed") {
    c.data.synth_seed = parse_u64(key, v);
  } else if (key.rfind("synth.", 0) == 0 && set_synth(c.data.synth, key.substr(6), v)) {
  } else if (key == "diag.max_probes") {
    c.diagnose.max_probes = parse_index(key, v);
  } else if (key == "diag.probe_users") {
    c.diagnose.probe_users = parse_index(key, v);
  } else if (key == "diag.max_length") {
    c.diagnose.limits.max_length = parse_index(key, v);
  } else if (key == "diag.max_items") {
    c.diagnose.limits.max_items = parse_index(key, v);
  } else if (key == "eval_records") {
    c.eval_records = parse_bool(key, v);
  } else if (!c.base.set(key, v)) {
    throw ConfigError(fmt::format("unknown key '{}'", key));
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_key_values(const std::vector<train::KeyValue>& kvs) {
  ExperimentConfig c;
  // `setting` also resets the loss, so it goes first whatever its position.
  for (const auto& kv : kvs) {
    if (kv.key == "setting") apply(c, kv.key, kv.value);
  }
  for (const auto& kv : kvs) {
    if (kv.key == "setting") continue;
    try {
      apply(c, kv.key, kv.value);
    } catch (const ConfigError& e) {
      if (kv.line > 0) throw ConfigError(fmt::format("line {}: {}", kv.line, e.what()));
      throw;
    }
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path,
                                        const std::vector<std::string>& overrides) {
  std::vector<train::KeyValue> kvs;
  if (!path.empty()) kvs = train::read_key_values(path);
  for (const auto& o : overrides) {
    train::KeyValue kv = train::parse_override(o);
    bool replaced = false;
    for (auto& prev : kvs) {
      if (prev.key == kv.key) {
        prev = kv;
        replaced = true;
      }
    }
    if (!replaced) kvs.push_back(kv);
  }
  return from_key_values(kvs);
}

void ExperimentConfig::validate() const {
  if (out.empty()) throw ConfigError("out must not be empty");
  if (data.source.empty()) throw ConfigError("dataset must not be empty");
  if (data.source == "synthetic") data.synth.validate();
  if (data.k_core < 0) throw ConfigError("k_core must be >= 0");
  if (diagnose.max_probes < 1 || diagnose.probe_users < 1) {
    throw ConfigError("diag.max_probes and diag.probe_users must be positive");
  }
  std::set<std::string> names;
  for (const auto& cell : cells()) {
    try {
      cell.cfg.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("cell {}: {}", cell.name, e.what()));
    }
    if (!names.insert(cell.name).second) {
      throw ConfigError(fmt::format("cell {} appears twice in the grid", cell.name));
    }
  }
}

std::vector<Cell> ExperimentConfig::cells() const {
  std::vector<Cell> out;
  for (auto p : policies) {
    for (Index k : Ks) {
      for (Index tau : taus) {
        for (std::uint64_t seed : seeds) {
          Cell c;
          c.cfg = base;
          c.cfg.policy = p;
          c.cfg.K = k;
          c.cfg.tau = tau;
          c.cfg.seed = seed;
          c.name = fmt::format("{}-K{}-tau{}-seed{}", to_string(p), k, tau, seed);
          out.push_back(std::move(c));
        }
      }
    }
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::resolved() const {
  std::vector<std::pair<std::string, std::string>> r;
  for (auto& [k, v] : base.entries()) {
    if (k == "policy" || k == "K" || k == "tau" || k == "seed") continue;
    r.emplace_back(k, v);
  }
  auto num = [](auto v) { return fmt::format("{}", v); };
  r.emplace_back("policy", join(policies, [](auto p) { return to_string(p); }));
  r.emplace_back("K", join(Ks, num));
  r.emplace_back("tau", join(taus, num));
  r.emplace_back("seed", join(seeds, num));
  r.emplace_back("out", out);
  r.emplace_back("dataset", data.source);
  r.emplace_back("format", data.from_cache ? "cache"
                           : data.format == data::Format::csv ? "csv"
                                                             : "movielens-dat");
  r.emplace_back("min_user_ratings", num(data.min_user_ratings));
  r.emplace_back("implicit_threshold", num(data.implicit_threshold));
  r.emplace_back("k_core", num(data.k_core));
  r.emplace_back("cache", data.cache);
  r.emplace_back("split_seed", num(data.split.seed));
  const auto& s = data.synth;
  r.emplace_back("synth.seed", num(data.synth_seed));
  r.emplace_back("synth.num_users", num(s.num_users));
  r.emplace_back("synth.num_items", num(s.num_items));
  r.emplace_back("synth.length", num(s.length));
  r.emplace_back("synth.num_anchor_items", num(s.num_anchor_items));
  r.emplace_back("synth.anchors_per_user", num(s.anchors_per_user));
  r.emplace_back("synth.rank", num(s.rank));
  r.emplace_back("synth.anchor_weight", num(s.anchor_weight));
  r.emplace_back("synth.mean_rating", num(s.mean_rating));
  r.emplace_back("synth.item_bias_sd", num(s.item_bias_sd));
  r.emplace_back("synth.anchor_noise", num(s.anchor_noise));
  r.emplace_back("synth.filler_noise", num(s.filler_noise));
  r.emplace_back("synth.anchor_sharpness", num(s.anchor_sharpness));
  r.emplace_back("synth.filler_sharpness", num(s.filler_sharpness));
  r.emplace_back("diag.max_probes", num(diagnose.max_probes));
  r.emplace_back("diag.probe_users", num(diagnose.probe_users));
  r.emplace_back("diag.max_length", num(diagnose.limits.max_length));
  r.emplace_back("diag.max_items", num(diagnose.limits.max_items));
  r.emplace_back("eval_records", eval_records ? "true" : "false");
  return r;
}

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  const auto& dc = cfg.data;
  const bool implicit = cfg.base.setting == rec::Setting::implicit_feedback;
  ExperimentData out;
  if (dc.source == "synthetic") {
    data::SynthConfig s = dc.synth;
    s.implicit = implicit;
    out.full = data::synth_stream(s, dc.synth_seed);
  } else if (!dc.cache.empty() && fs::exists(dc.cache)) {
    out.full = data::load_cache(dc.cache);
  } else {
    if (!fs::exists(dc.source)) {
      throw DataError(fmt::format("dataset '{}' does not exist", dc.source));
    }
    if (dc.from_cache) {
      out.full = data::load_cache(dc.source);
    } else {
      data::LoadOptions lo;
      lo.min_user_ratings = dc.min_user_ratings;
      lo.implicit_threshold = dc.implicit_threshold;
      out.full = implicit ? data::load_implicit(dc.source, dc.format, lo)
                          : data::load_explicit(dc.source, dc.format, lo);
      if (dc.k_core > 0) out.full = data::k_core_filter(out.full, dc.k_core);
      if (!dc.cache.empty()) {
        data::save_cache(dc.cache, out.full);
        out.written.push_back(dc.cache);
      }
    }
  }
  if (out.full.implicit != implicit) {
    throw ConfigError(fmt::format("dataset is {} but setting is {}",
                                  out.full.implicit ? "implicit" : "explicit",
                                  rec::to_string(cfg.base.setting)));
  }
  out.split = data::split_users(out.full.streams, dc.split);
  return out;
}

}  // namespace dips::cli
