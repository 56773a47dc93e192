#pragma once

#include "dips/ad/tensor.hpp"

#include <span>
#include <vector>

namespace dips::ad {

struct GradOptions {
  // Record the backward pass so the returned gradients are themselves
  // differentiable (needed for unrolled inner steps).
  bool create_graph = false;
};

// d loss / d param for each param. Params may be leaves or intermediate
// tensors; params the loss does not depend on get zero gradients.
std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> params,
                         GradOptions options = {});

// Gradient of a loss built on top of recorded gradient steps. Rejects losses
// whose history contains gradients computed without recording, since the
// second-order terms would silently be missing.
std::vector<Tensor> grad_through_grad(const Tensor& outer_loss, std::span<const Tensor> params);

}  // namespace dips::ad
