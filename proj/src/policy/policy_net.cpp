#include "dips/policy/policy_net.hpp"

#include "dips/common/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace dips::policy {

namespace {

Matrix uniform(Index r, Index c, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Tensor hidden_layers(const PolicyParams& phi, const Tensor& pre1, const DropoutMasks* masks) {
  Tensor h1 = ad::relu(ad::add_row(pre1, phi.b1));
  if (masks) h1 = ad::dropout(h1, masks->h1);
  Tensor h2 = ad::relu(ad::add_row(ad::matmul(h1, phi.w2), phi.b2));
  if (masks) h2 = ad::dropout(h2, masks->h2);
  return h2;
}

void check_entries(const IntermediateSketch& inter, const PolicyParams& phi) {
  if (inter.num_items != phi.num_items) {
    throw InvalidArgument(fmt::format("policy: sketch over {} items, network over {}",
                                      inter.num_items, phi.num_items));
  }
}

}  // namespace

PolicyParams PolicyParams::init(Index num_items, std::uint64_t seed, Index hidden,
                                double dropout) {
  if (num_items < 1 || hidden < 1) throw InvalidArgument("policy: sizes must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw InvalidArgument(fmt::format("policy: dropout rate {} outside [0, 1)", dropout));
  }
  std::mt19937_64 rng(seed);
  PolicyParams p;
  p.num_items = num_items;
  p.hidden = hidden;
  p.dropout = dropout;
  p.w1 = Tensor(uniform(num_items, hidden, 1.0 / std::sqrt(double(num_items)), rng), true);
  p.b1 = Tensor(Matrix::Zero(1, hidden), true);
  p.w2 = Tensor(uniform(hidden, hidden, 1.0 / std::sqrt(double(hidden)), rng), true);
  p.b2 = Tensor(Matrix::Zero(1, hidden), true);
  p.w3 = Tensor(uniform(num_items, hidden, 1.0 / std::sqrt(double(hidden)), rng), true);
  p.b3 = Tensor(Matrix::Zero(1, num_items), true);
  return p;
}

std::vector<Tensor> PolicyParams::all() const { return {w1, b1, w2, b2, w3, b3}; }

std::vector<std::pair<std::string, Tensor>> PolicyParams::named() const {
  return {{"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}, {"w3", w3}, {"b3", b3}};
}

PolicyParams PolicyParams::clone() const {
  PolicyParams p = *this;
  p.w1 = w1.clone(true);
  p.b1 = b1.clone(true);
  p.w2 = w2.clone(true);
  p.b2 = b2.clone(true);
  p.w3 = w3.clone(true);
  p.b3 = b3.clone(true);
  return p;
}

ParamFile PolicyParams::to_param_file() const {
  ParamFile f;
  f.meta["kind"] = "policy";
  f.meta["num_items"] = std::to_string(num_items);
  f.meta["hidden"] = std::to_string(hidden);
  f.meta["dropout"] = fmt::format("{:.17g}", dropout);
  for (auto& [name, t] : named()) f.arrays.push_back({name, t.value()});
  return f;
}

PolicyParams PolicyParams::from_param_file(const ParamFile& f) {
  auto meta = [&](const std::string& key) {
    auto it = f.meta.find(key);
    if (it == f.meta.end()) throw DataError(fmt::format("policy checkpoint: missing '{}'", key));
    return it->second;
  };
  if (meta("kind") != "policy") throw DataError("checkpoint does not hold policy params");
  PolicyParams p = init(std::stol(meta("num_items")), 0, std::stol(meta("hidden")),
                        std::stod(meta("dropout")));
  for (auto& [name, t] : p.named()) {
    const Matrix& v = f.get(name);
    if (v.rows() != t.rows() || v.cols() != t.cols()) {
      throw DataError(fmt::format("policy checkpoint: '{}' is {}x{}, expected {}", name, v.rows(),
                                  v.cols(), t.shape_str()));
    }
    t.mutable_value() = v;
  }
  return p;
}

DropoutMasks DropoutMasks::sample(const PolicyParams& phi, std::mt19937_64& rng) {
  DropoutMasks m;
  m.h1 = ad::dropout_mask(1, phi.hidden, phi.dropout, rng);
  m.h2 = ad::dropout_mask(1, phi.hidden, phi.dropout, rng);
  return m;
}

Tensor policy_forward(const PolicyParams& phi, const Tensor& input, const DropoutMasks* masks) {
  if (input.cols() != phi.num_items) {
    throw InvalidArgument(fmt::format("policy_forward: input {} for {} items", input.shape_str(),
                                      phi.num_items));
  }
  Tensor h2 = hidden_layers(phi, ad::matmul(input, phi.w1), masks);
  return ad::add_row(ad::matmul(h2, phi.w3, false, true), phi.b3);
}

Tensor policy_scores(const IntermediateSketch& inter, const rec::RatingVector& y,
                     const PolicyParams& phi, const DropoutMasks* masks) {
  check_entries(inter, phi);
  if (y.size() != phi.num_items) throw InvalidArgument("policy_scores: rating vector length");
  const Matrix zhat = inter.indicator();
  Matrix input = Matrix::Zero(1, phi.num_items);
  Matrix log_mask(1, phi.num_items);
  for (Index j = 0; j < phi.num_items; ++j) {
    if (zhat(0, j) > 0) {
      if (!y.mask[j]) {
        throw InvalidArgument(fmt::format("policy_scores: item {} in the sketch but never rated", j));
      }
      input(0, j) = zhat(0, j) * y.values[j];
    }
    log_mask(0, j) = std::log(zhat(0, j));
  }
  return ad::add(policy_forward(phi, Tensor(std::move(input)), masks), Tensor(std::move(log_mask)));
}

Tensor candidate_scores(const IntermediateSketch& inter, const PolicyParams& phi,
                        const DropoutMasks* masks) {
  check_entries(inter, phi);
  const std::vector<Index> items = inter.items();
  const Index c = static_cast<Index>(items.size());
  ad::SparseRows x;
  x.num_rows = 1;
  x.num_cols = phi.num_items;
  x.rows.resize(1);
  for (const auto& e : inter.entries) x.rows[0].emplace_back(e.item, e.rating);
  Tensor h2 = hidden_layers(phi, ad::sparse_matmul(x, phi.w1), masks);
  Tensor out = ad::matmul(h2, ad::gather_rows(phi.w3, items), false, true);
  Tensor bias = ad::reshape(ad::gather_rows(ad::reshape(phi.b3, phi.num_items, 1), items), 1, c);
  return ad::add(out, bias);
}

Tensor batched_candidate_scores(std::span<const IntermediateSketch* const> inters,
                                const PolicyParams& phi, const DropoutMasks* masks,
                                CandidateBatch* layout) {
  const Index e = static_cast<Index>(inters.size());
  if (e == 0) throw InvalidArgument("batched_candidate_scores: no sketches");
  CandidateBatch local;
  CandidateBatch& lay = layout ? *layout : local;
  lay.items.clear();
  lay.columns.assign(static_cast<std::size_t>(e), {});
  for (const auto* inter : inters) {
    check_entries(*inter, phi);
    for (const auto& en : inter->entries) lay.items.push_back(en.item);
  }
  std::sort(lay.items.begin(), lay.items.end());
  lay.items.erase(std::unique(lay.items.begin(), lay.items.end()), lay.items.end());
  const Index u = static_cast<Index>(lay.items.size());

  ad::SparseRows x;
  x.num_rows = e;
  x.num_cols = phi.num_items;
  x.rows.resize(static_cast<std::size_t>(e));
  Matrix log_mask = Matrix::Constant(e, u, -std::numeric_limits<double>::infinity());
  for (Index r = 0; r < e; ++r) {
    for (const auto& en : inters[r]->entries) {
      x.rows[r].emplace_back(en.item, en.rating);
      const Index col = static_cast<Index>(
          std::lower_bound(lay.items.begin(), lay.items.end(), en.item) - lay.items.begin());
      lay.columns[r].push_back(col);
      log_mask(r, col) = 0.0;
    }
  }
  if (masks && (masks->h1.rows() != e || masks->h2.rows() != e)) {
    throw InvalidArgument("batched_candidate_scores: one dropout mask row per sketch required");
  }
  Tensor h2 = hidden_layers(phi, ad::sparse_matmul(x, phi.w1), masks);
  Tensor out = ad::matmul(h2, ad::gather_rows(phi.w3, lay.items), false, true);
  Tensor bias = ad::reshape(ad::gather_rows(ad::reshape(phi.b3, phi.num_items, 1), lay.items), 1, u);
  return ad::add(ad::add_row(out, bias), Tensor(std::move(log_mask)));
}

}  // namespace dips::policy
