// First-order optimizers updating tensors in place. Weight decay is the L2
// form: the gradient is augmented with decay * param before the update.
#pragma once

#include "dips/ad/tensor.hpp"

#include <vector>

namespace dips::train {

using ad::Matrix;
using ad::Tensor;

class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum, double weight_decay)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  // buf = momentum * buf + (g + wd * p);  p -= lr * buf
  void step(std::vector<Tensor>& params, const std::vector<Matrix>& grads);
  double lr() const { return lr_; }

 private:
  double lr_, momentum_, weight_decay_;
  std::vector<Matrix> velocity_;
};

class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps, double weight_decay)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(std::vector<Tensor>& params, const std::vector<Matrix>& grads);
  double lr() const { return lr_; }
  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

}  // namespace dips::train
