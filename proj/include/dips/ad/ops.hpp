#pragma once

#include "dips/ad/tensor.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace dips::ad {

// Linear algebra
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
Tensor transpose(const Tensor& a);

// Element-wise (identical shapes)
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor square(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);

// Broadcasting. The source must be 1x1, 1xC or Rx1.
Tensor broadcast_to(const Tensor& a, Index rows, Index cols);
// Inverse of broadcast_to: sums `a` down to the given shape.
Tensor sum_to(const Tensor& a, Index rows, Index cols);
// a (RxC) plus a row vector (1xC) added to every row.
Tensor add_row(const Tensor& a, const Tensor& row);
// a (RxC) times a column vector (Rx1), scaling each row.
Tensor mul_col(const Tensor& a, const Tensor& col);

// Reductions
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_rows(const Tensor& a);  // RxC -> 1xC
Tensor sum_cols(const Tensor& a);  // RxC -> Rx1

// Row-wise normalizers
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);
Tensor logsumexp(const Tensor& a);  // RxC -> Rx1

// Shape manipulation
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& a, Index begin, Index count);
Tensor reshape(const Tensor& a, Index rows, Index cols);

// Embedding gather: rows of `table` selected by `index`; backward scatters.
Tensor gather_rows(const Tensor& table, std::span<const Index> index);
Tensor scatter_rows(const Tensor& src, std::span<const Index> index, Index num_rows);
// Picks entry (r, index[r]) for every row r: RxC -> Rx1.
Tensor pick_cols(const Tensor& a, std::span<const Index> index);

// Constant sparse matrix times a dense tensor. Rows of the sparse operand are
// given as (column, value) lists.
struct SparseRows {
  Index num_rows = 0;
  Index num_cols = 0;
  std::vector<std::vector<std::pair<Index, double>>> rows;

  SparseRows transposed() const;
  Matrix to_dense() const;
};
Tensor sparse_matmul(const SparseRows& s, const Tensor& dense);

// Dropout with a precomputed mask whose entries are 0 or 1/(1-rate).
Matrix dropout_mask(Index rows, Index cols, double rate, std::mt19937_64& rng);
Tensor dropout(const Tensor& a, const Matrix& mask);

// Convenience operators
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

}  // namespace dips::ad
