// Reverse-mode differentiation core.
//
// Every value is a dense row-major matrix of doubles; scalars are 1x1 and
// vectors are 1xN rows. Operations applied to tensors that require gradients
// record a node holding their inputs and a backward rule. Backward rules are
// themselves written with recording operations, so a gradient computed with
// `create_graph` can be differentiated again. That is how unrolled inner
// gradient steps are meta-differentiated.
#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dips::ad {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Tensor;
struct Node;

struct TensorImpl {
  Matrix value;
  bool requires_grad = false;
  // Set on gradients returned without graph recording, and propagated to
  // everything computed from them. grad_through_grad refuses such losses.
  bool detached_grad = false;
  std::shared_ptr<Node> grad_fn;
};

// Computes input gradients from the output gradient. `needs[i]` tells the
// rule which inputs actually want a gradient; others may be left undefined.
using BackwardFn = std::function<std::vector<Tensor>(
    const Tensor& out, const Tensor& grad_out, std::span<const bool> needs)>;

struct Node {
  std::string_view op;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor zeros(Index rows, Index cols);
  static Tensor ones(Index rows, Index cols);
  static Tensor full(Index rows, Index cols, double v);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor row(std::span<const double> values, bool requires_grad = false);
  static Tensor row(std::initializer_list<double> values, bool requires_grad = false);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows,
                          bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  Index rows() const { return impl_->value.rows(); }
  Index cols() const { return impl_->value.cols(); }
  Index size() const { return impl_->value.size(); }
  std::vector<std::size_t> shape() const;
  std::string shape_str() const;

  const Matrix& value() const { return impl_->value; }
  // Direct write access, intended for optimizers updating leaves in place.
  Matrix& mutable_value() { return impl_->value; }
  double item() const;
  double at(Index r, Index c) const { return impl_->value(r, c); }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const { return !impl_->grad_fn; }
  bool detached_grad() const { return impl_ && impl_->detached_grad; }
  const Node* grad_fn() const { return impl_->grad_fn.get(); }

  // Same value, no history.
  Tensor detach() const;
  // Deep copy of the value as a fresh leaf.
  Tensor clone(bool requires_grad = false) const;

  TensorImpl* impl() const noexcept { return impl_.get(); }
  bool same(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  friend Tensor make_op_result(Matrix, std::string_view, std::vector<Tensor>, BackwardFn);
  std::shared_ptr<TensorImpl> impl_;
};

// Builds the output of an operation. The node is recorded only when grad mode
// is on and at least one input requires gradients.
Tensor make_op_result(Matrix value, std::string_view op, std::vector<Tensor> inputs,
                      BackwardFn backward);

// Thread-local recording switch.
bool grad_enabled() noexcept;

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

class NoGradGuard : public GradModeGuard {
 public:
  NoGradGuard() : GradModeGuard(false) {}
};

}  // namespace dips::ad
