#include "dips/ad/autograd.hpp"

#include "dips/ad/ops.hpp"
#include "dips/common/error.hpp"

#include <fmt/format.h>

#include <unordered_map>
#include <unordered_set>

namespace dips::ad {

namespace {

struct Visit {
  TensorImpl* impl;
  const Tensor* tensor;
  std::size_t next_input = 0;
};

// Post-order over the nodes the loss depends on, keeping only nodes that lie
// on a path to one of the params.
std::vector<Tensor> relevant_post_order(const Tensor& loss,
                                        const std::unordered_set<TensorImpl*>& params) {
  std::unordered_map<TensorImpl*, bool> relevant;
  std::vector<Tensor> order;
  std::vector<Visit> stack;
  stack.push_back({loss.impl(), &loss});
  relevant.emplace(loss.impl(), params.count(loss.impl()) > 0);

  while (!stack.empty()) {
    Visit& top = stack.back();
    const Node* node = top.impl->grad_fn.get();
    if (node != nullptr && top.next_input < node->inputs.size()) {
      const Tensor& in = node->inputs[top.next_input++];
      if (!in.requires_grad()) continue;
      if (relevant.count(in.impl()) > 0) continue;
      relevant.emplace(in.impl(), params.count(in.impl()) > 0);
      stack.push_back({in.impl(), &in});
      continue;
    }
    // All inputs finished.
    bool is_relevant = relevant[top.impl];
    if (node != nullptr) {
      for (const auto& in : node->inputs) {
        if (in.requires_grad() && relevant[in.impl()]) is_relevant = true;
      }
    }
    relevant[top.impl] = is_relevant;
    if (is_relevant) order.push_back(*top.tensor);
    stack.pop_back();
  }
  return order;
}

}  // namespace

std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> params, GradOptions options) {
  if (!loss.defined()) throw InvalidArgument("grad: undefined loss");
  if (loss.size() != 1) {
    throw InvalidArgument(fmt::format("grad: loss must be a scalar, got {}", loss.shape_str()));
  }
  std::unordered_set<TensorImpl*> param_set;
  for (const auto& p : params) {
    if (!p.defined()) throw InvalidArgument("grad: undefined parameter");
    param_set.insert(p.impl());
  }

  std::unordered_map<TensorImpl*, Tensor> grads;
  if (loss.requires_grad()) {
    const std::vector<Tensor> order = relevant_post_order(loss, param_set);
    std::unordered_set<TensorImpl*> on_path;
    for (const auto& t : order) on_path.insert(t.impl());

    GradModeGuard mode(options.create_graph);
    grads.emplace(loss.impl(), Tensor::ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const Tensor& out = *it;
      const Node* node = out.grad_fn();
      if (node == nullptr) continue;
      auto found = grads.find(out.impl());
      if (found == grads.end()) continue;
      const Tensor g = found->second;

      std::vector<bool> needs_storage(node->inputs.size());
      bool any = false;
      for (std::size_t i = 0; i < node->inputs.size(); ++i) {
        const Tensor& in = node->inputs[i];
        needs_storage[i] = in.requires_grad() && on_path.count(in.impl()) > 0;
        any = any || needs_storage[i];
      }
      if (!any) continue;
      // std::vector<bool> has no contiguous storage.
      std::unique_ptr<bool[]> needs(new bool[node->inputs.size()]);
      for (std::size_t i = 0; i < node->inputs.size(); ++i) needs[i] = needs_storage[i];

      std::vector<Tensor> in_grads =
          node->backward(out, g, std::span<const bool>(needs.get(), node->inputs.size()));
      for (std::size_t i = 0; i < node->inputs.size(); ++i) {
        if (!needs[i] || !in_grads[i].defined()) continue;
        const Tensor& in = node->inputs[i];
        if (in_grads[i].rows() != in.rows() || in_grads[i].cols() != in.cols()) {
          throw NumericalError(fmt::format("grad: backward of '{}' produced {} for input {}",
                                           node->op, in_grads[i].shape_str(), in.shape_str()));
        }
        auto [pos, inserted] = grads.try_emplace(in.impl(), in_grads[i]);
        if (!inserted) pos->second = add(pos->second, in_grads[i]);
      }
    }
  }

  std::vector<Tensor> result;
  result.reserve(params.size());
  for (const auto& p : params) {
    auto found = grads.find(p.impl());
    Tensor g = found != grads.end() ? found->second : Tensor::zeros(p.rows(), p.cols());
    if (!options.create_graph) {
      g = g.detach();
      g.impl()->detached_grad = true;
    }
    result.push_back(std::move(g));
  }
  return result;
}

std::vector<Tensor> grad_through_grad(const Tensor& outer_loss, std::span<const Tensor> params) {
  if (outer_loss.defined() && outer_loss.detached_grad()) {
    throw InvalidArgument(
        "grad_through_grad: the loss depends on gradient steps computed without graph "
        "recording; recompute the inner steps with create_graph enabled");
  }
  return grad(outer_loss, params, GradOptions{.create_graph = false});
}

}  // namespace dips::ad
