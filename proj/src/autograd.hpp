#pragma once

#include <cmath>
#include <initializer_list>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "grformer/errors.hpp"
#include "grformer/tensor.hpp"

namespace grf::detail {

template <typename T>
void check_finite(const std::vector<T>& values, const char* op) {
  for (const T v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value");
  }
}

// Wraps a freshly computed forward result. The backward closure is kept only
// when grad mode is on and some input requires grad.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward_fn) {
  check_finite(data, op);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const Tensor<T>* in : inputs) needs_grad = needs_grad || in->requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    for (const Tensor<T>* in : inputs) node->parents.push_back(in->node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

// Same as above for a variable-length input list.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward_fn) {
  check_finite(data, op);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

// Gradient sink for parent i, or nullptr when that input is constant.
template <typename T>
std::vector<T>* grad_sink(Node<T>& self, std::size_t i) {
  Node<T>& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

}  // namespace grf::detail
