// Training configuration and the flat `key = value` format it is read from.
#pragma once

#include "dips/policy/selection.hpp"
#include "dips/rec/model.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace dips::train {

using ad::Index;

// random: reservoir sampling. hardest: keep the largest current losses.
// influence: keep the most helpful entries by influence score.
// dips: learned policy with the queue gradient; dips1: the same without the
// queue. earliest: keep the first K interactions (reference policy for the
// synthetic benchmark, whose informative items come first).
enum class PolicyKind { random, hardest, influence, dips, dips1, earliest };
enum class UpdateMode { online, batch };

std::string to_string(PolicyKind k);
std::string to_string(UpdateMode m);
PolicyKind parse_policy(const std::string& s);
UpdateMode parse_mode(const std::string& s);
bool is_learned(PolicyKind k);

struct TrainConfig {
  rec::Setting setting = rec::Setting::explicit_feedback;
  rec::LossKind loss = rec::LossKind::mse;
  PolicyKind policy = PolicyKind::dips;
  UpdateMode mode = UpdateMode::online;

  Index K = 4;
  Index tau = 1;  // ignored in online mode
  Index queue = 100;
  Index inner_steps = 10;
  double inner_lr = 0.2;

  double lr_user = 1e-4;
  double lr_item = 2e-5;
  double lr_policy = 1e-4;
  double momentum = 0.9;
  double weight_decay = 2e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  Index batch_size = 256;
  Index epochs = 1;
  std::uint64_t seed = 0;

  Index dim = 32;
  Index hidden = 64;
  Index policy_hidden = 128;
  double policy_dropout = 0.10;
  // Dropout in the policy network while training; off means every training
  // forward pass of the policy is deterministic.
  bool policy_grad_dropout = true;
  policy::SelectMode train_select = policy::SelectMode::stochastic;
  policy::SelectMode eval_select = policy::SelectMode::deterministic;
  double influence_damping = 1e-3;
  // Implicit ranking: drop items the user already interacted with from the pool.
  bool exclude_history = false;

  Index update_period() const { return mode == UpdateMode::online ? 1 : tau; }
  Index queue_capacity() const { return policy == PolicyKind::dips ? queue : 0; }
  rec::ModelDims model_dims(Index num_items) const;

  void validate() const;
  // Applies one key; returns false for an unknown key. Bad values throw.
  bool set(const std::string& key, const std::string& value);
  std::vector<std::pair<std::string, std::string>> entries() const;
};

// Ordered key/value pairs as read from a config file, with the line each came from.
struct KeyValue {
  std::string key;
  std::string value;
  int line = 0;
};

// `key = value` per line; `#` starts a comment; blank lines ignored.
std::vector<KeyValue> parse_key_values(const std::string& text, const std::string& source);
std::vector<KeyValue> read_key_values(const std::string& path);
// Splits `key=value` as given on a command line.
KeyValue parse_override(const std::string& assignment);

double parse_double(const std::string& key, const std::string& value);
Index parse_index(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
std::uint64_t parse_u64(const std::string& key, const std::string& value);

}  // namespace dips::train
