#include "dips/train/optim.hpp"

#include "dips/common/error.hpp"

#include <fmt/format.h>

#include <cmath>

namespace dips::train {

namespace {

void check_shapes(const std::vector<Tensor>& params, const std::vector<Matrix>& grads,
                  const char* who) {
  if (params.size() != grads.size()) {
    throw InvalidArgument(fmt::format("{}: {} params but {} gradients", who, params.size(),
                                      grads.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].rows() != grads[i].rows() || params[i].cols() != grads[i].cols()) {
      throw InvalidArgument(fmt::format("{}: gradient {} is {}x{}, param is {}", who, i,
                                        grads[i].rows(), grads[i].cols(), params[i].shape_str()));
    }
  }
}

}  // namespace

void SgdMomentum::step(std::vector<Tensor>& params, const std::vector<Matrix>& grads) {
  check_shapes(params, grads, "sgd");
  if (velocity_.empty()) {
    for (const auto& p : params) velocity_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = params[i].mutable_value();
    velocity_[i] = momentum_ * velocity_[i] + grads[i] + weight_decay_ * p;
    p -= lr_ * velocity_[i];
  }
}

void Adam::step(std::vector<Tensor>& params, const std::vector<Matrix>& grads) {
  check_shapes(params, grads, "adam");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Matrix::Zero(p.rows(), p.cols()));
      v_.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, double(t_));
  const double c2 = 1.0 - std::pow(beta2_, double(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = params[i].mutable_value();
    const Matrix g = grads[i] + weight_decay_ * p;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    p.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

}  // namespace dips::train
