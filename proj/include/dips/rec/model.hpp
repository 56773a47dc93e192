// Neural collaborative-filtering recommender g(.; theta).
//
// Explicit feedback: g(j) = relu([u, e_j] W1 + b1) w2 + b2, a scalar rating.
// W1 is stored as its user rows (w1_user) and item rows (w1_item) so the item
// half can be computed once per sketch and reused across inner steps.
//
// Implicit feedback: score_j = < relu(u W1 + b1) W2 + b2 , e_j > for all M
// items in one pass; the loss is a categorical cross-entropy over all items.
#pragma once

#include "dips/ad/tensor.hpp"
#include "dips/common/params_io.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dips::rec {

using ad::Index;

enum class Setting { explicit_feedback, implicit_feedback };
enum class LossKind { mse, bce, cce };

std::string to_string(Setting s);
std::string to_string(LossKind k);
Setting parse_setting(const std::string& s);
LossKind parse_loss(const std::string& s);

struct ModelDims {
  Index num_items = 0;
  Index dim = 32;
  Index hidden = 64;
  Setting setting = Setting::explicit_feedback;
  LossKind loss = LossKind::mse;

  void validate() const;
};

struct RecParams {
  ModelDims dims;
  ad::Tensor user;      // 1 x d     prior user embedding
  ad::Tensor item_emb;  // M x d
  ad::Tensor w1_user;   // d x H
  ad::Tensor w1_item;   // d x H     explicit only
  ad::Tensor b1;        // 1 x H
  ad::Tensor w2;        // H x 1 (explicit) or H x d (implicit)
  ad::Tensor b2;        // 1 x 1 (explicit) or 1 x d (implicit)

  static RecParams init(const ModelDims& dims, std::uint64_t seed);

  // Item-side parameters; fixed during inner adaptation.
  std::vector<ad::Tensor> item_side() const;
  // User embedding first, then the item side.
  std::vector<ad::Tensor> all() const;
  std::vector<std::pair<std::string, ad::Tensor>> named() const;

  RecParams clone() const;
  void set_requires_grad(bool flag);

  ParamFile to_param_file() const;
  static RecParams from_param_file(const ParamFile& file);
};

// Adapted parameters for one user at one step. Only the user embedding
// differs from the global parameters.
struct LocalParams {
  ad::Tensor user;
  const RecParams* global = nullptr;

  static LocalParams from_global(const RecParams& params);
};

// One user's ratings over all M items; entries outside `mask` are never read.
struct RatingVector {
  std::vector<double> values;
  std::vector<std::uint8_t> mask;

  explicit RatingVector(Index num_items = 0);
  void set(Index item, double rating);
  std::vector<Index> interacted() const;
  Index size() const { return static_cast<Index>(values.size()); }
};

// Item-side quantities for a fixed list of interacted items.
struct ItemBlock {
  std::vector<Index> items;
  ad::Tensor ratings;    // n x 1 targets (explicit); unused for implicit
  ad::Tensor item_part;  // n x H: e_j W1_item + b1 (explicit only)
};

ItemBlock prepare_block(const RecParams& params, std::span<const Index> items,
                        std::span<const double> ratings);

// Explicit predictions for every block item: n x 1.
ad::Tensor block_predictions(const RecParams& params, const ItemBlock& block,
                             const ad::Tensor& user);
// Implicit scores over all items: 1 x M.
ad::Tensor implicit_scores(const RecParams& params, const ad::Tensor& user);
// Pointwise losses of every block item: n x 1.
ad::Tensor block_losses(const RecParams& params, const ItemBlock& block, const ad::Tensor& user);
// sum_j weights_j * loss_j with weights given as a 1 x n row.
ad::Tensor weighted_block_loss(const RecParams& params, const ItemBlock& block,
                               const ad::Tensor& weights, const ad::Tensor& user);
// Loss on a single (item, rating) pair; rating is ignored for implicit.
ad::Tensor item_loss(const RecParams& params, const ad::Tensor& user, Index item, double rating);

double predict_explicit(const LocalParams& theta, Index item);
ad::Tensor predict_implicit(const LocalParams& theta);

// Explicit: prediction is a 1x1 rating (mse) or logit (bce); rating is the
// target. Implicit (cce): prediction is 1xM scores; rating is the class index.
ad::Tensor pointwise_loss(double rating, const ad::Tensor& prediction, LossKind kind);

// sum_j z_j * loss(r_j, g(j; theta)) with z a 1 x M weight row.
ad::Tensor sketch_loss(const ad::Tensor& z, const RatingVector& y, const LocalParams& theta);

}  // namespace dips::rec
