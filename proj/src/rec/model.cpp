#include "dips/rec/model.hpp"

#include "dips/ad/ops.hpp"
#include "dips/common/error.hpp"

#include <fmt/format.h>

#include <cmath>
#include <random>

namespace dips::rec {

using ad::Matrix;
using ad::Tensor;

std::string to_string(Setting s) {
  return s == Setting::explicit_feedback ? "explicit" : "implicit";
}

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::mse: return "mse";
    case LossKind::bce: return "bce";
    case LossKind::cce: return "cce";
  }
  return "?";
}

Setting parse_setting(const std::string& s) {
  if (s == "explicit") return Setting::explicit_feedback;
  if (s == "implicit") return Setting::implicit_feedback;
  throw ConfigError(fmt::format("unknown setting '{}' (expected explicit or implicit)", s));
}

LossKind parse_loss(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "bce") return LossKind::bce;
  if (s == "cce") return LossKind::cce;
  throw ConfigError(fmt::format("unknown loss '{}' (expected mse, bce or cce)", s));
}

void ModelDims::validate() const {
  if (num_items <= 0) throw InvalidArgument("model: item count must be positive");
  if (dim <= 0 || hidden <= 0) throw InvalidArgument("model: dimensions must be positive");
  if (setting == Setting::implicit_feedback && loss != LossKind::cce) {
    throw InvalidArgument("model: implicit feedback requires the cce loss");
  }
  if (setting == Setting::explicit_feedback && loss == LossKind::cce) {
    throw InvalidArgument("model: explicit feedback takes mse or bce");
  }
}

namespace {

Matrix uniform(Index r, Index c, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

void check_item(const RecParams& p, Index item) {
  if (item < 0 || item >= p.dims.num_items) {
    throw InvalidArgument(
        fmt::format("item {} out of range [0, {})", item, p.dims.num_items));
  }
}

bool is_explicit(const RecParams& p) { return p.dims.setting == Setting::explicit_feedback; }

// Per-item losses from explicit predictions (n x 1) and targets (n x 1).
Tensor explicit_losses(const Tensor& pred, const Tensor& target, LossKind kind) {
  if (kind == LossKind::mse) return ad::square(ad::sub(pred, target));
  // Binary cross-entropy on logits: softplus(x) - r x, softplus via a stable
  // two-column logsumexp.
  Tensor softplus = ad::logsumexp(ad::concat_cols(Tensor::zeros(pred.rows(), 1), pred));
  return ad::sub(softplus, ad::mul(target, pred));
}

}  // namespace

RecParams RecParams::init(const ModelDims& dims, std::uint64_t seed) {
  dims.validate();
  std::mt19937_64 rng(seed);
  const Index d = dims.dim;
  const Index h = dims.hidden;
  const double emb = 0.1;
  RecParams p;
  p.dims = dims;
  p.user = Tensor(uniform(1, d, emb, rng), true);
  p.item_emb = Tensor(uniform(dims.num_items, d, emb, rng), true);
  if (dims.setting == Setting::explicit_feedback) {
    // Both halves of the concatenated first layer share fan-in 2d.
    const double b = 1.0 / std::sqrt(2.0 * d);
    p.w1_user = Tensor(uniform(d, h, b, rng), true);
    p.w1_item = Tensor(uniform(d, h, b, rng), true);
    p.w2 = Tensor(uniform(h, 1, 1.0 / std::sqrt(double(h)), rng), true);
    p.b2 = Tensor(Matrix::Zero(1, 1), true);
  } else {
    p.w1_user = Tensor(uniform(d, h, 1.0 / std::sqrt(double(d)), rng), true);
    p.w2 = Tensor(uniform(h, d, 1.0 / std::sqrt(double(h)), rng), true);
    p.b2 = Tensor(Matrix::Zero(1, d), true);
  }
  p.b1 = Tensor(Matrix::Zero(1, h), true);
  return p;
}

std::vector<Tensor> RecParams::item_side() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) {
    if (name != "user") out.push_back(t);
  }
  return out;
}

std::vector<Tensor> RecParams::all() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

std::vector<std::pair<std::string, Tensor>> RecParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out{
      {"user", user}, {"item_emb", item_emb}, {"w1_user", w1_user}};
  if (w1_item.defined()) out.emplace_back("w1_item", w1_item);
  out.emplace_back("b1", b1);
  out.emplace_back("w2", w2);
  out.emplace_back("b2", b2);
  return out;
}

RecParams RecParams::clone() const {
  RecParams p;
  p.dims = dims;
  auto copy = [](const Tensor& t) {
    return t.defined() ? t.clone(t.requires_grad()) : Tensor();
  };
  p.user = copy(user);
  p.item_emb = copy(item_emb);
  p.w1_user = copy(w1_user);
  p.w1_item = copy(w1_item);
  p.b1 = copy(b1);
  p.w2 = copy(w2);
  p.b2 = copy(b2);
  return p;
}

void RecParams::set_requires_grad(bool flag) {
  for (auto& t : all()) t.set_requires_grad(flag);
}

ParamFile RecParams::to_param_file() const {
  ParamFile f;
  f.meta["kind"] = "recommender";
  f.meta["setting"] = to_string(dims.setting);
  f.meta["loss"] = to_string(dims.loss);
  f.meta["num_items"] = std::to_string(dims.num_items);
  f.meta["dim"] = std::to_string(dims.dim);
  f.meta["hidden"] = std::to_string(dims.hidden);
  for (auto& [name, t] : named()) f.arrays.push_back({name, t.value()});
  return f;
}

RecParams RecParams::from_param_file(const ParamFile& f) {
  auto meta = [&](const std::string& key) {
    auto it = f.meta.find(key);
    if (it == f.meta.end()) throw DataError(fmt::format("recommender checkpoint: missing '{}'", key));
    return it->second;
  };
  if (meta("kind") != "recommender") throw DataError("checkpoint does not hold recommender params");
  ModelDims dims;
  dims.setting = parse_setting(meta("setting"));
  dims.loss = parse_loss(meta("loss"));
  dims.num_items = std::stol(meta("num_items"));
  dims.dim = std::stol(meta("dim"));
  dims.hidden = std::stol(meta("hidden"));
  RecParams p = init(dims, 0);
  for (auto& [name, t] : p.named()) {
    const Matrix& v = f.get(name);
    if (v.rows() != t.rows() || v.cols() != t.cols()) {
      throw DataError(fmt::format("recommender checkpoint: '{}' is {}x{}, expected {}", name,
                                  v.rows(), v.cols(), t.shape_str()));
    }
    t.mutable_value() = v;
  }
  return p;
}

LocalParams LocalParams::from_global(const RecParams& params) {
  return LocalParams{params.user, &params};
}

RatingVector::RatingVector(Index num_items)
    : values(static_cast<std::size_t>(num_items), 0.0),
      mask(static_cast<std::size_t>(num_items), 0) {}

void RatingVector::set(Index item, double rating) {
  if (item < 0 || item >= size()) {
    throw InvalidArgument(fmt::format("rating vector: item {} out of range [0, {})", item, size()));
  }
  values[item] = rating;
  mask[item] = 1;
}

std::vector<Index> RatingVector::interacted() const {
  std::vector<Index> out;
  for (Index j = 0; j < size(); ++j) {
    if (mask[j]) out.push_back(j);
  }
  return out;
}

ItemBlock prepare_block(const RecParams& params, std::span<const Index> items,
                        std::span<const double> ratings) {
  if (ratings.size() != items.size()) {
    throw InvalidArgument("prepare_block: items and ratings differ in length");
  }
  for (Index j : items) check_item(params, j);
  ItemBlock block;
  block.items.assign(items.begin(), items.end());
  const Index n = static_cast<Index>(items.size());
  Matrix r(n, 1);
  for (Index i = 0; i < n; ++i) r(i, 0) = ratings[i];
  block.ratings = Tensor(std::move(r));
  if (is_explicit(params)) {
    Tensor emb = ad::gather_rows(params.item_emb, block.items);
    block.item_part = ad::add_row(ad::matmul(emb, params.w1_item), params.b1);
  }
  return block;
}

Tensor block_predictions(const RecParams& params, const ItemBlock& block, const Tensor& user) {
  if (!is_explicit(params)) throw InvalidArgument("block_predictions: explicit setting only");
  Tensor h = ad::relu(ad::add_row(block.item_part, ad::matmul(user, params.w1_user)));
  return ad::add_row(ad::matmul(h, params.w2), params.b2);
}

Tensor implicit_scores(const RecParams& params, const Tensor& user) {
  if (is_explicit(params)) throw InvalidArgument("implicit_scores: implicit setting only");
  Tensor h = ad::relu(ad::add_row(ad::matmul(user, params.w1_user), params.b1));
  Tensor tower = ad::add_row(ad::matmul(h, params.w2), params.b2);
  return ad::matmul(tower, params.item_emb, false, true);
}

Tensor block_losses(const RecParams& params, const ItemBlock& block, const Tensor& user) {
  if (is_explicit(params)) {
    return explicit_losses(block_predictions(params, block, user), block.ratings,
                           params.dims.loss);
  }
  Tensor scores = implicit_scores(params, user);
  Tensor lse = ad::logsumexp(scores);
  Tensor picked = ad::gather_rows(ad::reshape(scores, scores.cols(), 1), block.items);
  return ad::sub(ad::broadcast_to(lse, picked.rows(), 1), picked);
}

Tensor weighted_block_loss(const RecParams& params, const ItemBlock& block, const Tensor& weights,
                           const Tensor& user) {
  const Index n = static_cast<Index>(block.items.size());
  if (weights.rows() != 1 || weights.cols() != n) {
    throw InvalidArgument(fmt::format("weighted_block_loss: weights {} for {} items",
                                      weights.shape_str(), n));
  }
  if (n == 0) return Tensor::scalar(0.0);
  return ad::matmul(weights, block_losses(params, block, user));
}

Tensor item_loss(const RecParams& params, const Tensor& user, Index item, double rating) {
  check_item(params, item);
  if (!is_explicit(params)) {
    return pointwise_loss(static_cast<double>(item), implicit_scores(params, user),
                          LossKind::cce);
  }
  const Index one[] = {item};
  const double r[] = {rating};
  const ItemBlock block = prepare_block(params, one, r);
  return explicit_losses(block_predictions(params, block, user), block.ratings, params.dims.loss);
}

double predict_explicit(const LocalParams& theta, Index item) {
  const RecParams& p = *theta.global;
  check_item(p, item);
  ad::NoGradGuard no_grad;
  const Index one[] = {item};
  const double r[] = {0.0};
  return block_predictions(p, prepare_block(p, one, r), theta.user).item();
}

Tensor predict_implicit(const LocalParams& theta) {
  return implicit_scores(*theta.global, theta.user);
}

Tensor pointwise_loss(double rating, const Tensor& prediction, LossKind kind) {
  if (kind == LossKind::cce) {
    const Index m = prediction.cols();
    if (prediction.rows() != 1) {
      throw InvalidArgument(fmt::format("cce: scores must be a row, got {}", prediction.shape_str()));
    }
    const double c = std::round(rating);
    if (c != rating || c < 0 || c >= static_cast<double>(m)) {
      throw InvalidArgument(fmt::format("cce: invalid class index {} for {} classes", rating, m));
    }
    const Index cls[] = {static_cast<Index>(c)};
    return ad::sub(ad::logsumexp(prediction), ad::pick_cols(prediction, cls));
  }
  if (prediction.size() != 1) {
    throw InvalidArgument(
        fmt::format("{}: prediction must be 1x1, got {}", to_string(kind), prediction.shape_str()));
  }
  if (kind == LossKind::bce && rating != 0.0 && rating != 1.0) {
    throw InvalidArgument(fmt::format("bce: target must be 0 or 1, got {}", rating));
  }
  return explicit_losses(prediction, Tensor::scalar(rating), kind);
}

Tensor sketch_loss(const Tensor& z, const RatingVector& y, const LocalParams& theta) {
  const RecParams& p = *theta.global;
  const Index m = p.dims.num_items;
  if (z.rows() != 1 || z.cols() != m || y.size() != m) {
    throw InvalidArgument(fmt::format("sketch_loss: z {} and y of length {} for {} items",
                                      z.shape_str(), y.size(), m));
  }
  std::vector<Index> items;
  std::vector<double> ratings;
  for (Index j = 0; j < m; ++j) {
    const double w = z.at(0, j);
    if (w < 0) throw InvalidArgument(fmt::format("sketch_loss: negative weight on item {}", j));
    if (!y.mask[j]) {
      if (w != 0) {
        throw InvalidArgument(
            fmt::format("sketch_loss: positive weight on item {} outside the interaction mask", j));
      }
      continue;
    }
    items.push_back(j);
    ratings.push_back(y.values[j]);
  }
  if (items.empty()) return Tensor::scalar(0.0);
  ItemBlock block = prepare_block(p, items, ratings);
  // Gather the weights of interacted items so the loss stays differentiable in z.
  Tensor w = ad::reshape(ad::gather_rows(ad::reshape(z, m, 1), items), 1,
                         static_cast<Index>(items.size()));
  return weighted_block_loss(p, block, w, theta.user);
}

}  // namespace dips::rec
