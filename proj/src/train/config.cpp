#include "dips/train/config.hpp"

#include "dips/common/error.hpp"

#include <fmt/format.h>

#include <charconv>
#include <fstream>
#include <sstream>

namespace dips::train {

std::string to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::random: return "random";
    case PolicyKind::hardest: return "hardest";
    case PolicyKind::influence: return "influence";
    case PolicyKind::dips: return "dips";
    case PolicyKind::dips1: return "dips1";
    case PolicyKind::earliest: return "earliest";
  }
  return "?";
}

std::string to_string(UpdateMode m) { return m == UpdateMode::online ? "online" : "batch"; }

PolicyKind parse_policy(const std::string& s) {
  for (auto k : {PolicyKind::random, PolicyKind::hardest, PolicyKind::influence, PolicyKind::dips,
                 PolicyKind::dips1, PolicyKind::earliest}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError(fmt::format(
      "unknown policy '{}' (expected random, hardest, influence, dips, dips1, earliest)", s));
}

UpdateMode parse_mode(const std::string& s) {
  if (s == "online") return UpdateMode::online;
  if (s == "batch") return UpdateMode::batch;
  throw ConfigError(fmt::format("unknown mode '{}' (expected online or batch)", s));
}

bool is_learned(PolicyKind k) { return k == PolicyKind::dips || k == PolicyKind::dips1; }

rec::ModelDims TrainConfig::model_dims(Index num_items) const {
  rec::ModelDims d;
  d.num_items = num_items;
  d.dim = dim;
  d.hidden = hidden;
  d.setting = setting;
  d.loss = loss;
  return d;
}

void TrainConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(K >= 1, fmt::format("K must be >= 1, got {}", K));
  need(tau >= 1, fmt::format("tau must be >= 1, got {}", tau));
  need(mode == UpdateMode::batch || tau == 1, "tau > 1 requires mode = batch");
  need(queue >= 0, fmt::format("queue must be >= 0, got {}", queue));
  need(inner_steps >= 0, fmt::format("inner_steps must be >= 0, got {}", inner_steps));
  for (auto [name, v] : {std::pair{"inner_lr", inner_lr}, {"lr_user", lr_user}, {"lr_item", lr_item},
                         {"lr_policy", lr_policy}, {"weight_decay", weight_decay}}) {
    need(v >= 0, fmt::format("{} must be >= 0, got {}", name, v));
  }
  need(momentum >= 0 && momentum < 1, "momentum must be in [0, 1)");
  need(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1,
       "adam betas must be in [0, 1)");
  need(adam_eps > 0, "adam_eps must be positive");
  need(batch_size >= 1, "batch_size must be >= 1");
  need(epochs >= 0, "epochs must be >= 0");
  need(dim >= 1 && hidden >= 1 && policy_hidden >= 1, "layer sizes must be positive");
  need(policy_dropout >= 0 && policy_dropout < 1, "policy_dropout must be in [0, 1)");
  need(influence_damping >= 0, "influence_damping must be >= 0");
  if (setting == rec::Setting::implicit_feedback) {
    need(loss == rec::LossKind::cce, "implicit setting requires loss = cce");
  } else {
    need(loss != rec::LossKind::cce, "explicit setting requires loss = mse or bce");
  }
}

bool TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "setting") {
    setting = rec::parse_setting(value);
    // Keep the loss consistent unless it is set explicitly afterwards.
    if (setting == rec::Setting::implicit_feedback) loss = rec::LossKind::cce;
    else if (loss == rec::LossKind::cce) loss = rec::LossKind::mse;
  } else if (key == "loss") {
    loss = rec::parse_loss(value);
  } else if (key == "policy") {
    policy = parse_policy(value);
  } else if (key == "mode") {
    mode = parse_mode(value);
  } else if (key == "K") {
    K = parse_index(key, value);
  } else if (key == "tau") {
    tau = parse_index(key, value);
  } else if (key == "queue") {
    queue = parse_index(key, value);
  } else if (key == "inner_steps") {
    inner_steps = parse_index(key, value);
  } else if (key == "inner_lr") {
    inner_lr = parse_double(key, value);
  } else if (key == "lr_user") {
    lr_user = parse_double(key, value);
  } else if (key == "lr_item") {
    lr_item = parse_double(key, value);
  } else if (key == "lr_policy") {
    lr_policy = parse_double(key, value);
  } else if (key == "momentum") {
    momentum = parse_double(key, value);
  } else if (key == "weight_decay") {
    weight_decay = parse_double(key, value);
  } else if (key == "adam_beta1") {
    adam_beta1 = parse_double(key, value);
  } else if (key == "adam_beta2") {
    adam_beta2 = parse_double(key, value);
  } else if (key == "adam_eps") {
    adam_eps = parse_double(key, value);
  } else if (key == "batch_size") {
    batch_size = parse_index(key, value);
  } else if (key == "epochs") {
    epochs = parse_index(key, value);
  } else if (key == "seed") {
    seed = parse_u64(key, value);
  } else if (key == "dim") {
    dim = parse_index(key, value);
  } else if (key == "hidden") {
    hidden = parse_index(key, value);
  } else if (key == "policy_hidden") {
    policy_hidden = parse_index(key, value);
  } else if (key == "policy_dropout") {
    policy_dropout = parse_double(key, value);
  } else if (key == "policy_grad_dropout") {
    policy_grad_dropout = parse_bool(key, value);
  } else if (key == "train_select") {
    train_select = policy::parse_select_mode(value);
  } else if (key == "eval_select") {
    eval_select = policy::parse_select_mode(value);
  } else if (key == "influence_damping") {
    influence_damping = parse_double(key, value);
  } else if (key == "exclude_history") {
    exclude_history = parse_bool(key, value);
  } else {
    return false;
  }
  return true;
}

std::vector<std::pair<std::string, std::string>> TrainConfig::entries() const {
  auto num = [](double v) { return fmt::format("{}", v); };
  return {
      {"setting", rec::to_string(setting)},
      {"loss", rec::to_string(loss)},
      {"policy", to_string(policy)},
      {"mode", to_string(mode)},
      {"K", std::to_string(K)},
      {"tau", std::to_string(tau)},
      {"queue", std::to_string(queue)},
      {"inner_steps", std::to_string(inner_steps)},
      {"inner_lr", num(inner_lr)},
      {"lr_user", num(lr_user)},
      {"lr_item", num(lr_item)},
      {"lr_policy", num(lr_policy)},
      {"momentum", num(momentum)},
      {"weight_decay", num(weight_decay)},
      {"adam_beta1", num(adam_beta1)},
      {"adam_beta2", num(adam_beta2)},
      {"adam_eps", num(adam_eps)},
      {"batch_size", std::to_string(batch_size)},
      {"epochs", std::to_string(epochs)},
      {"seed", std::to_string(seed)},
      {"dim", std::to_string(dim)},
      {"hidden", std::to_string(hidden)},
      {"policy_hidden", std::to_string(policy_hidden)},
      {"policy_dropout", num(policy_dropout)},
      {"policy_grad_dropout", policy_grad_dropout ? "true" : "false"},
      {"train_select", policy::to_string(train_select)},
      {"eval_select", policy::to_string(eval_select)},
      {"influence_damping", num(influence_damping)},
      {"exclude_history", exclude_history ? "true" : "false"},
  };
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<KeyValue> parse_key_values(const std::string& text, const std::string& source) {
  std::vector<KeyValue> out;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("{}:{}: expected 'key = value'", source, n));
    }
    KeyValue kv{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), n};
    if (kv.key.empty()) throw ConfigError(fmt::format("{}:{}: empty key", source, n));
    for (const auto& prev : out) {
      if (prev.key == kv.key) {
        throw ConfigError(fmt::format("{}:{}: key '{}' already set on line {}", source, n, kv.key,
                                      prev.line));
      }
    }
    out.push_back(std::move(kv));
  }
  return out;
}

std::vector<KeyValue> read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_key_values(buf.str(), path);
}

KeyValue parse_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(fmt::format("override '{}' is not of the form key=value", assignment));
  }
  return {trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), 0};
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used == value.size()) return v;
  } catch (...) {
  }
  throw ConfigError(fmt::format("{}: '{}' is not a number", key, value));
}

Index parse_index(const std::string& key, const std::string& value) {
  long long v = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(fmt::format("{}: '{}' is not an integer", key, value));
  }
  return static_cast<Index>(v);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(fmt::format("{}: '{}' is not a nonnegative integer", key, value));
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError(fmt::format("{}: '{}' is not a boolean", key, value));
}

}  // namespace dips::train
