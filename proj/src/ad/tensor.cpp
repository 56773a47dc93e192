#include "dips/ad/tensor.hpp"

#include "dips/common/error.hpp"

#include <fmt/format.h>

namespace dips::ad {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(g_grad_enabled) {
  g_grad_enabled = enabled;
}

GradModeGuard::~GradModeGuard() { g_grad_enabled = previous_; }

Tensor::Tensor(Matrix value, bool requires_grad) : impl_(std::make_shared<TensorImpl>()) {
  impl_->value = std::move(value);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Index rows, Index cols) { return Tensor(Matrix::Zero(rows, cols)); }

Tensor Tensor::ones(Index rows, Index cols) { return Tensor(Matrix::Ones(rows, cols)); }

Tensor Tensor::full(Index rows, Index cols, double v) {
  return Tensor(Matrix::Constant(rows, cols, v));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(Matrix::Constant(1, 1, v), requires_grad);
}

Tensor Tensor::row(std::span<const double> values, bool requires_grad) {
  Matrix m(1, static_cast<Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) m(0, static_cast<Index>(i)) = values[i];
  return Tensor(std::move(m), requires_grad);
}

Tensor Tensor::row(std::initializer_list<double> values, bool requires_grad) {
  return row(std::span<const double>(values.begin(), values.size()), requires_grad);
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad) {
  const auto r = static_cast<Index>(rows.size());
  const auto c = r == 0 ? 0 : static_cast<Index>(rows.begin()->size());
  Matrix m(r, c);
  Index i = 0;
  for (const auto& row : rows) {
    if (static_cast<Index>(row.size()) != c) {
      throw InvalidArgument("Tensor::from_rows: ragged rows");
    }
    Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return Tensor(std::move(m), requires_grad);
}

std::vector<std::size_t> Tensor::shape() const {
  return {static_cast<std::size_t>(rows()), static_cast<std::size_t>(cols())};
}

std::string Tensor::shape_str() const { return fmt::format("[{}x{}]", rows(), cols()); }

double Tensor::item() const {
  if (size() != 1) {
    throw InvalidArgument(fmt::format("item(): tensor of shape {} is not a scalar", shape_str()));
  }
  return impl_->value(0, 0);
}

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw InvalidArgument("set_requires_grad on a non-leaf tensor");
  impl_->requires_grad = flag;
  return *this;
}

Tensor Tensor::detach() const {
  Tensor t(impl_->value);
  t.impl_->detached_grad = impl_->detached_grad;
  return t;
}

Tensor Tensor::clone(bool requires_grad) const { return Tensor(impl_->value, requires_grad); }

Tensor make_op_result(Matrix value, std::string_view op, std::vector<Tensor> inputs,
                      BackwardFn backward) {
  Tensor out;
  out.impl_ = std::make_shared<TensorImpl>();
  out.impl_->value = std::move(value);
  bool any_requires = false;
  bool tainted = false;
  for (const auto& in : inputs) {
    any_requires = any_requires || in.requires_grad();
    tainted = tainted || in.detached_grad();
  }
  out.impl_->detached_grad = tainted;
  if (any_requires && grad_enabled()) {
    out.impl_->requires_grad = true;
    auto node = std::make_shared<Node>();
    node->op = op;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    out.impl_->grad_fn = std::move(node);
  }
  return out;
}

}  // namespace dips::ad
