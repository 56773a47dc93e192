#include "dips/ad/ops.hpp"

#include "dips/common/error.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

namespace dips::ad {

namespace {

[[noreturn]] void shape_error(std::string_view op, const Tensor& a, const Tensor& b) {
  throw InvalidArgument(
      fmt::format("{}: incompatible shapes {} and {}", op, a.shape_str(), b.shape_str()));
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(op, a, b);
}

void require_defined(std::string_view op, const Tensor& a) {
  if (!a.defined()) throw InvalidArgument(fmt::format("{}: undefined tensor", op));
}

Tensor constant(Matrix m) { return Tensor(std::move(m)); }

Tensor reciprocal(const Tensor& a);
Tensor embed_cols(const Tensor& a, Index begin, Index total);
Tensor put_cols(const Tensor& a, std::span<const Index> index, Index cols);

Tensor reciprocal(const Tensor& a) {
  Matrix v = a.value().cwiseInverse();
  return make_op_result(std::move(v), "reciprocal", {a},
                        [](const Tensor& out, const Tensor& g, std::span<const bool>) {
                          // d(1/a) = -1/a^2
                          return std::vector<Tensor>{neg(mul(g, mul(out, out)))};
                        });
}

Tensor embed_cols(const Tensor& a, Index begin, Index total) {
  Matrix v = Matrix::Zero(a.rows(), total);
  v.middleCols(begin, a.cols()) = a.value();
  const Index count = a.cols();
  return make_op_result(std::move(v), "embed_cols", {a},
                        [begin, count](const Tensor&, const Tensor& g, std::span<const bool>) {
                          return std::vector<Tensor>{slice_cols(g, begin, count)};
                        });
}

Tensor put_cols(const Tensor& a, std::span<const Index> index, Index cols) {
  if (a.cols() != 1 || a.rows() != static_cast<Index>(index.size())) {
    throw InvalidArgument(fmt::format("put_cols: bad source shape {}", a.shape_str()));
  }
  Matrix v = Matrix::Zero(a.rows(), cols);
  for (Index r = 0; r < a.rows(); ++r) v(r, index[r]) = a.value()(r, 0);
  std::vector<Index> idx(index.begin(), index.end());
  return make_op_result(std::move(v), "put_cols", {a},
                        [idx](const Tensor&, const Tensor& g, std::span<const bool>) {
                          return std::vector<Tensor>{pick_cols(g, idx)};
                        });
}

void check_index(std::string_view op, std::span<const Index> index, Index bound) {
  for (Index i : index) {
    if (i < 0 || i >= bound) {
      throw InvalidArgument(fmt::format("{}: index {} out of range [0, {})", op, i, bound));
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  require_defined("matmul", a);
  require_defined("matmul", b);
  const Index inner_a = trans_a ? a.rows() : a.cols();
  const Index inner_b = trans_b ? b.cols() : b.rows();
  if (inner_a != inner_b) {
    throw InvalidArgument(fmt::format("matmul: incompatible shapes {}{} and {}{}",
                                      a.shape_str(), trans_a ? "^T" : "", b.shape_str(),
                                      trans_b ? "^T" : ""));
  }
  Matrix v;
  if (!trans_a && !trans_b) {
    v.noalias() = a.value() * b.value();
  } else if (trans_a && !trans_b) {
    v.noalias() = a.value().transpose() * b.value();
  } else if (!trans_a && trans_b) {
    v.noalias() = a.value() * b.value().transpose();
  } else {
    v.noalias() = a.value().transpose() * b.value().transpose();
  }
  return make_op_result(
      std::move(v), "matmul", {a, b},
      [a, b, trans_a, trans_b](const Tensor&, const Tensor& g, std::span<const bool> needs) {
        std::vector<Tensor> out(2);
        if (needs[0]) out[0] = trans_a ? matmul(b, g, trans_b, true) : matmul(g, b, false, !trans_b);
        if (needs[1]) out[1] = trans_b ? matmul(g, a, true, trans_a) : matmul(a, g, !trans_a, false);
        return out;
      });
}

Tensor transpose(const Tensor& a) {
  require_defined("transpose", a);
  Matrix v = a.value().transpose();
  return make_op_result(std::move(v), "transpose", {a},
                        [](const Tensor&, const Tensor& g, std::span<const bool>) {
                          return std::vector<Tensor>{transpose(g)};
                        });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Matrix v = a.value() + b.value();
  return make_op_result(std::move(v), "add", {a, b},
                        [](const Tensor&, const Tensor& g, std::span<const bool>) {
                          return std::vector<Tensor>{g, g};
                        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Matrix v = a.value() - b.value();
  return make_op_result(std::move(v), "sub", {a, b},
                        [](const Tensor&, const Tensor& g, std::span<const bool> needs) {
                          std::vector<Tensor> out(2);
                          out[0] = g;
                          if (needs[1]) out[1] = neg(g);
                          return out;
                        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Matrix v = a.value().cwiseProduct(b.value());
  return make_op_result(std::move(v), "mul", {a, b},
                        [a, b](const Tensor&, const Tensor& g, std::span<const bool> needs) {
                          std::vector<Tensor> out(2);
                          if (needs[0]) out[0] = mul(g, b);
                          if (needs[1]) out[1] = mul(g, a);
                          return out;
                        });
}

Tensor neg(const Tensor& a) {
  require_defined("neg", a);
  Matrix v = -a.value();
  return make_op_result(std::move(v), "neg", {a},
                        [](const Tensor&, const Tensor& g, std::span<const bool>) {
                          return std::vector<Tensor>{neg(g)};
                        });
}

Tensor scale(const Tensor& a, double c) {
  require_defined("scale", a);
  Matrix v = a.value() * c;
  return make_op_result(std::move(v), "scale", {a},
                        [c](const Tensor&, const Tensor& g, std::span<const bool>) {
                          return std::vector<Tensor>{scale(g, c)};
                        });
}

Tensor add_scalar(const Tensor& a, double c) {
  require_defined("add_scalar", a);
  Matrix v = a.value().array() + c;
  return make_op_result(std::move(v), "add_scalar", {a},
                        [](const Tensor&, const Tensor& g, std::span<const bool>) {
                          return std::vector<Tensor>{g};
                        });
}

Tensor square(const Tensor& a) {
  require_defined("square", a);
  Matrix v = a.value().cwiseAbs2();
  return make_op_result(std::move(v), "square", {a},
                        [a](const Tensor&, const Tensor& g, std::span<const bool>) {
                          return std::vector<Tensor>{mul(g, scale(a, 2.0))};
                        });
}

Tensor relu(const Tensor& a) {
  require_defined("relu", a);
  Matrix v = a.value().cwiseMax(0.0);
  return make_op_result(std::move(v), "relu", {a},
                        [a](const Tensor&, const Tensor& g, std::span<const bool>) {
                          Matrix mask = (a.value().array() > 0.0).cast<double>().matrix();
                          return std::vector<Tensor>{mul(g, constant(std::move(mask)))};
                        });
}

Tensor sigmoid(const Tensor& a) {
  require_defined("sigmoid", a);
  Matrix v = a.value().unaryExpr([](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  return make_op_result(std::move(v), "sigmoid", {a},
                        [](const Tensor& out, const Tensor& g, std::span<const bool>) {
                          return std::vector<Tensor>{mul(g, mul(out, add_scalar(neg(out), 1.0)))};
                        });
}

Tensor log(const Tensor& a) {
  require_defined("log", a);
  Matrix v = a.value().unaryExpr([](double x) { return std::log(x); });
  return make_op_result(std::move(v), "log", {a},
                        [a](const Tensor&, const Tensor& g, std::span<const bool>) {
                          return std::vector<Tensor>{mul(g, reciprocal(a))};
                        });
}

Tensor exp(const Tensor& a) {
  require_defined("exp", a);
  Matrix v = a.value().unaryExpr([](double x) { return std::exp(x); });
  return make_op_result(std::move(v), "exp", {a},
                        [](const Tensor& out, const Tensor& g, std::span<const bool>) {
                          return std::vector<Tensor>{mul(g, out)};
                        });
}

Tensor broadcast_to(const Tensor& a, Index rows, Index cols) {
  require_defined("broadcast_to", a);
  if (a.rows() == rows && a.cols() == cols) return a;
  Matrix v;
  if (a.rows() == 1 && a.cols() == 1) {
    v = Matrix::Constant(rows, cols, a.value()(0, 0));
  } else if (a.rows() == 1 && a.cols() == cols) {
    v = a.value().replicate(rows, 1);
  } else if (a.cols() == 1 && a.rows() == rows) {
    v = a.value().replicate(1, cols);
  } else {
    throw InvalidArgument(fmt::format("broadcast_to: cannot broadcast {} to [{}x{}]",
                                      a.shape_str(), rows, cols));
  }
  const Index r0 = a.rows();
  const Index c0 = a.cols();
  return make_op_result(std::move(v), "broadcast_to", {a},
                        [r0, c0](const Tensor&, const Tensor& g, std::span<const bool>) {
                          return std::vector<Tensor>{sum_to(g, r0, c0)};
                        });
}

Tensor sum_to(const Tensor& a, Index rows, Index cols) {
  require_defined("sum_to", a);
  if (a.rows() == rows && a.cols() == cols) return a;
  if (rows == 1 && cols == 1) return sum(a);
  if (rows == 1 && cols == a.cols()) return sum_rows(a);
  if (cols == 1 && rows == a.rows()) return sum_cols(a);
  throw InvalidArgument(
      fmt::format("sum_to: cannot reduce {} to [{}x{}]", a.shape_str(), rows, cols));
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_defined("add_row", a);
  require_defined("add_row", row);
  if (row.rows() != 1 || row.cols() != a.cols()) shape_error("add_row", a, row);
  Matrix v = a.value().rowwise() + row.value().row(0);
  return make_op_result(std::move(v), "add_row", {a, row},
                        [](const Tensor&, const Tensor& g, std::span<const bool> needs) {
                          std::vector<Tensor> out(2);
                          out[0] = g;
                          if (needs[1]) out[1] = sum_rows(g);
                          return out;
                        });
}

Tensor mul_col(const Tensor& a, const Tensor& col) {
  require_defined("mul_col", a);
  require_defined("mul_col", col);
  if (col.cols() != 1 || col.rows() != a.rows()) shape_error("mul_col", a, col);
  Matrix v = a.value().array().colwise() * col.value().col(0).array();
  return make_op_result(
      std::move(v), "mul_col", {a, col},
      [a, col](const Tensor&, const Tensor& g, std::span<const bool> needs) {
        std::vector<Tensor> out(2);
        if (needs[0]) out[0] = mul_col(g, col);
        if (needs[1]) out[1] = sum_cols(mul(g, a));
        return out;
      });
}

Tensor sum(const Tensor& a) {
  require_defined("sum", a);
  Matrix v = Matrix::Constant(1, 1, a.value().sum());
  const Index r = a.rows();
  const Index c = a.cols();
  return make_op_result(std::move(v), "sum", {a},
                        [r, c](const Tensor&, const Tensor& g, std::span<const bool>) {
                          return std::vector<Tensor>{broadcast_to(g, r, c)};
                        });
}

Tensor mean(const Tensor& a) {
  require_defined("mean", a);
  if (a.size() == 0) throw InvalidArgument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_rows(const Tensor& a) {
  require_defined("sum_rows", a);
  Matrix v = a.value().colwise().sum();
  const Index r = a.rows();
  const Index c = a.cols();
  return make_op_result(std::move(v), "sum_rows", {a},
                        [r, c](const Tensor&, const Tensor& g, std::span<const bool>) {
                          return std::vector<Tensor>{broadcast_to(g, r, c)};
                        });
}

Tensor sum_cols(const Tensor& a) {
  require_defined("sum_cols", a);
  Matrix v = a.value().rowwise().sum();
  const Index r = a.rows();
  const Index c = a.cols();
  return make_op_result(std::move(v), "sum_cols", {a},
                        [r, c](const Tensor&, const Tensor& g, std::span<const bool>) {
                          return std::vector<Tensor>{broadcast_to(g, r, c)};
                        });
}

namespace {

// Row maxima over finite entries; rows without any finite entry are rejected.
Eigen::VectorXd finite_row_max(std::string_view op, const Matrix& m) {
  Eigen::VectorXd mx(m.rows());
  for (Index r = 0; r < m.rows(); ++r) {
    double best = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < m.cols(); ++c) {
      const double x = m(r, c);
      if (std::isnan(x)) throw NumericalError(fmt::format("{}: NaN input in row {}", op, r));
      if (x > best) best = x;
    }
    if (!std::isfinite(best)) {
      throw NumericalError(fmt::format("{}: row {} has no finite entry", op, r));
    }
    mx(r) = best;
  }
  return mx;
}

}  // namespace

Tensor softmax(const Tensor& a) {
  require_defined("softmax", a);
  const Matrix& x = a.value();
  const Eigen::VectorXd mx = finite_row_max("softmax", x);
  Matrix v(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    v.row(r) = (x.row(r).array() - mx(r)).unaryExpr([](double t) { return std::exp(t); });
    v.row(r) /= v.row(r).sum();
  }
  return make_op_result(std::move(v), "softmax", {a},
                        [](const Tensor& s, const Tensor& g, std::span<const bool>) {
                          // s * (g - <g, s>)
                          Tensor dot = sum_cols(mul(g, s));
                          return std::vector<Tensor>{
                              mul(s, sub(g, broadcast_to(dot, g.rows(), g.cols())))};
                        });
}

Tensor logsumexp(const Tensor& a) {
  require_defined("logsumexp", a);
  const Matrix& x = a.value();
  const Eigen::VectorXd mx = finite_row_max("logsumexp", x);
  Matrix v(x.rows(), 1);
  for (Index r = 0; r < x.rows(); ++r) {
    v(r, 0) = mx(r) + std::log((x.row(r).array() - mx(r))
                                    .unaryExpr([](double t) { return std::exp(t); })
                                    .sum());
  }
  return make_op_result(std::move(v), "logsumexp", {a},
                        [a](const Tensor& out, const Tensor& g, std::span<const bool>) {
                          Tensor probs = exp(sub(a, broadcast_to(out, a.rows(), a.cols())));
                          return std::vector<Tensor>{mul_col(probs, g)};
                        });
}

Tensor log_softmax(const Tensor& a) {
  return sub(a, broadcast_to(logsumexp(a), a.rows(), a.cols()));
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_defined("concat_cols", a);
  require_defined("concat_cols", b);
  if (a.rows() != b.rows()) shape_error("concat_cols", a, b);
  Matrix v(a.rows(), a.cols() + b.cols());
  v.leftCols(a.cols()) = a.value();
  v.rightCols(b.cols()) = b.value();
  const Index ca = a.cols();
  const Index cb = b.cols();
  return make_op_result(std::move(v), "concat_cols", {a, b},
                        [ca, cb](const Tensor&, const Tensor& g, std::span<const bool> needs) {
                          std::vector<Tensor> out(2);
                          if (needs[0]) out[0] = slice_cols(g, 0, ca);
                          if (needs[1]) out[1] = slice_cols(g, ca, cb);
                          return out;
                        });
}

Tensor slice_cols(const Tensor& a, Index begin, Index count) {
  require_defined("slice_cols", a);
  if (begin < 0 || count < 0 || begin + count > a.cols()) {
    throw InvalidArgument(
        fmt::format("slice_cols: range [{}, {}) outside {}", begin, begin + count, a.shape_str()));
  }
  Matrix v = a.value().middleCols(begin, count);
  const Index total = a.cols();
  return make_op_result(std::move(v), "slice_cols", {a},
                        [begin, total](const Tensor&, const Tensor& g, std::span<const bool>) {
                          return std::vector<Tensor>{embed_cols(g, begin, total)};
                        });
}

Tensor reshape(const Tensor& a, Index rows, Index cols) {
  require_defined("reshape", a);
  if (rows * cols != a.size()) {
    throw InvalidArgument(
        fmt::format("reshape: cannot reshape {} to [{}x{}]", a.shape_str(), rows, cols));
  }
  Matrix v = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  const Index r0 = a.rows();
  const Index c0 = a.cols();
  return make_op_result(std::move(v), "reshape", {a},
                        [r0, c0](const Tensor&, const Tensor& g, std::span<const bool>) {
                          return std::vector<Tensor>{reshape(g, r0, c0)};
                        });
}

Tensor gather_rows(const Tensor& table, std::span<const Index> index) {
  require_defined("gather_rows", table);
  check_index("gather_rows", index, table.rows());
  Matrix v(static_cast<Index>(index.size()), table.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    v.row(static_cast<Index>(r)) = table.value().row(index[r]);
  }
  std::vector<Index> idx(index.begin(), index.end());
  const Index n = table.rows();
  return make_op_result(std::move(v), "gather_rows", {table},
                        [idx, n](const Tensor&, const Tensor& g, std::span<const bool>) {
                          return std::vector<Tensor>{scatter_rows(g, idx, n)};
                        });
}

Tensor scatter_rows(const Tensor& src, std::span<const Index> index, Index num_rows) {
  require_defined("scatter_rows", src);
  if (src.rows() != static_cast<Index>(index.size())) {
    throw InvalidArgument(fmt::format("scatter_rows: {} rows for {} indices", src.rows(),
                                      index.size()));
  }
  check_index("scatter_rows", index, num_rows);
  Matrix v = Matrix::Zero(num_rows, src.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    v.row(index[r]) += src.value().row(static_cast<Index>(r));
  }
  std::vector<Index> idx(index.begin(), index.end());
  return make_op_result(std::move(v), "scatter_rows", {src},
                        [idx](const Tensor&, const Tensor& g, std::span<const bool>) {
                          return std::vector<Tensor>{gather_rows(g, idx)};
                        });
}

Tensor pick_cols(const Tensor& a, std::span<const Index> index) {
  require_defined("pick_cols", a);
  if (a.rows() != static_cast<Index>(index.size())) {
    throw InvalidArgument(
        fmt::format("pick_cols: {} indices for tensor {}", index.size(), a.shape_str()));
  }
  check_index("pick_cols", index, a.cols());
  Matrix v(a.rows(), 1);
  for (Index r = 0; r < a.rows(); ++r) v(r, 0) = a.value()(r, index[r]);
  std::vector<Index> idx(index.begin(), index.end());
  const Index cols = a.cols();
  return make_op_result(std::move(v), "pick_cols", {a},
                        [idx, cols](const Tensor&, const Tensor& g, std::span<const bool>) {
                          return std::vector<Tensor>{put_cols(g, idx, cols)};
                        });
}

SparseRows SparseRows::transposed() const {
  SparseRows t;
  t.num_rows = num_cols;
  t.num_cols = num_rows;
  t.rows.resize(static_cast<std::size_t>(num_cols));
  for (Index r = 0; r < num_rows; ++r) {
    for (const auto& [c, v] : rows[static_cast<std::size_t>(r)]) {
      t.rows[static_cast<std::size_t>(c)].emplace_back(r, v);
    }
  }
  return t;
}

Matrix SparseRows::to_dense() const {
  Matrix m = Matrix::Zero(num_rows, num_cols);
  for (Index r = 0; r < num_rows; ++r) {
    for (const auto& [c, v] : rows[static_cast<std::size_t>(r)]) m(r, c) += v;
  }
  return m;
}

Tensor sparse_matmul(const SparseRows& s, const Tensor& dense) {
  require_defined("sparse_matmul", dense);
  if (s.num_cols != dense.rows() || static_cast<Index>(s.rows.size()) != s.num_rows) {
    throw InvalidArgument(fmt::format("sparse_matmul: incompatible shapes [{}x{}] and {}",
                                      s.num_rows, s.num_cols, dense.shape_str()));
  }
  Matrix v = Matrix::Zero(s.num_rows, dense.cols());
  for (Index r = 0; r < s.num_rows; ++r) {
    for (const auto& [c, x] : s.rows[static_cast<std::size_t>(r)]) {
      if (c < 0 || c >= s.num_cols) {
        throw InvalidArgument(fmt::format("sparse_matmul: column {} out of range", c));
      }
      v.row(r) += x * dense.value().row(c);
    }
  }
  return make_op_result(std::move(v), "sparse_matmul", {dense},
                        [s](const Tensor&, const Tensor& g, std::span<const bool>) {
                          return std::vector<Tensor>{sparse_matmul(s.transposed(), g)};
                        });
}

Matrix dropout_mask(Index rows, Index cols, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw InvalidArgument(fmt::format("dropout_mask: rate {} outside [0, 1)", rate));
  }
  if (rate == 0.0) return Matrix::Ones(rows, cols);
  std::bernoulli_distribution keep(1.0 - rate);
  const double inv = 1.0 / (1.0 - rate);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = keep(rng) ? inv : 0.0;
  return m;
}

Tensor dropout(const Tensor& a, const Matrix& mask) {
  require_defined("dropout", a);
  if (mask.rows() != a.rows() || mask.cols() != a.cols()) {
    throw InvalidArgument(fmt::format("dropout: mask [{}x{}] does not match {}", mask.rows(),
                                      mask.cols(), a.shape_str()));
  }
  return mul(a, constant(mask));
}

}  // namespace dips::ad
