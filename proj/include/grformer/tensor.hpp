#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace grf {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the dynamic graph. Leaves have no parents; every other node
// owns its inputs, so a result tensor keeps the sub-graph that produced it
// alive until it is dropped.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return parents.empty(); }
  std::vector<T>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

bool grad_enabled();

// Disables graph construction on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Dense row-major tensor handle. Copies share the underlying node, the same
// way framework tensors alias; use detach() for an independent leaf copy.
template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // In-place access for optimizers and initializers; only valid on leaves.
  std::span<T> mutable_data();
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  // Empty span when no gradient has been accumulated yet.
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  Tensor detach() const;
  const char* op_name() const { return node_->op; }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Topologically ordered record of the differentiable ops reachable from a
// root. Inputs always precede the ops that consume them.
template <typename T>
class Tape {
 public:
  static Tape record(const Tensor<T>& root);

  std::size_t size() const { return order_.size(); }
  std::span<detail::Node<T>* const> nodes() const { return order_; }
  // Seeds d(root)/d(root) = 1 and visits each recorded op once, in reverse.
  // Leaf gradients accumulate across calls; interior ones are reset first.
  void backward();

 private:
  std::shared_ptr<detail::Node<T>> root_;
  std::vector<detail::Node<T>*> order_;
};

// Throws ContractError unless loss holds exactly one element.
template <typename T>
void backward(const Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace grf
