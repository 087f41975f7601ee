#include "grformer/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "autograd.hpp"
#include "grformer/errors.hpp"

namespace grf {

namespace {
thread_local bool t_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("Tensor::from: shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " elements, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape()));
  }
  return node_->shape[axis];
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node_->is_leaf()) throw ContractError("mutable_data on a non-leaf tensor");
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw DimensionError("at(): index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= node_->shape[axis]) throw DimensionError("at(): index out of range");
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  if (!node_->is_leaf()) throw ContractError("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = flag;
  return *this;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from(node_->shape, node_->data, false);
}

template <typename T>
Tape<T> Tape<T>::record(const Tensor<T>& root) {
  Tape tape;
  tape.root_ = root.node();
  // Iterative post-order DFS; a node is emitted after all of its parents.
  std::unordered_set<const detail::Node<T>*> visited;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  if (root.requires_grad()) stack.emplace_back(root.node().get(), 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next == 0 && !visited.insert(node).second) {
      stack.pop_back();
      continue;
    }
    if (next < node->parents.size()) {
      detail::Node<T>* parent = node->parents[next].get();
      ++next;
      if (parent->requires_grad && !visited.count(parent)) stack.emplace_back(parent, 0);
      continue;
    }
    tape.order_.push_back(node);
    stack.pop_back();
  }
  return tape;
}

template <typename T>
void Tape<T>::backward() {
  if (!root_) return;
  for (detail::Node<T>* node : order_) {
    if (!node->is_leaf()) node->grad.clear();
  }
  std::vector<T>& seed = root_->grad_buffer();
  for (T& g : seed) g += T(1);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    detail::Node<T>* node = *it;
    if (node->backward_fn && node->grad.size() == node->data.size()) node->backward_fn(*node);
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss does not depend on any tensor requiring grad");
  }
  Tape<T>::record(loss).backward();
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace grf
