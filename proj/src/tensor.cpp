#include "glam/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "glam/error.hpp"

namespace glam {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Buffer<Scalar> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl<Scalar>>()) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
  }
  if (element_count(shape) != data.size()) {
    throw ShapeError("shape " + to_string(shape) + " needs " +
                     std::to_string(element_count(shape)) + " elements, got " +
                     std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Scalar(0), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::full(Shape shape, Scalar value, bool requires_grad) {
  Buffer<Scalar> data(element_count(shape), value);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::scalar(Scalar value, bool requires_grad) {
  return Tensor(Shape{}, Buffer<Scalar>{value}, requires_grad);
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return impl_->data[0];
}

template <typename Scalar>
void Tensor<Scalar>::set_requires_grad(bool value) {
  if (!is_leaf()) throw StateError("requires_grad can only be changed on leaf tensors");
  impl_->requires_grad = value;
}

template <typename Scalar>
const std::string& Tensor<Scalar>::op() const {
  static const std::string leaf = "leaf";
  return impl_->node ? impl_->node->op : leaf;
}

template <typename Scalar>
std::span<Scalar> Tensor<Scalar>::grad_buffer() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), Scalar(0));
  return impl_->grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  Tensor out;
  out.impl_ = std::make_shared<detail::TensorImpl<Scalar>>();
  out.impl_->shape = impl_->shape;
  out.impl_->data = impl_->data;
  return out;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::clone() const {
  Tensor out = detach();
  out.impl_->requires_grad = impl_->requires_grad && is_leaf();
  return out;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::record(Shape shape, Buffer<Scalar> data, std::string op,
                                      std::vector<Tensor> inputs, BackwardFn<Scalar> backward) {
  Tensor out(std::move(shape), std::move(data));
  const bool tracked = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor& t) { return t.requires_grad(); });
  if (!tracked) return out;
  auto node = std::make_shared<detail::Node<Scalar>>();
  node->op = std::move(op);
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  out.impl_->node = std::move(node);
  out.impl_->requires_grad = true;
  return out;
}

template <typename Scalar>
void Tensor<Scalar>::backward() const {
  if (size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + to_string(shape()));
  }
  if (!impl_->requires_grad) throw StateError("backward() on a tensor that tracks no gradient");

  using Impl = detail::TensorImpl<Scalar>;
  // Iterative post-order DFS; reversed, it is a topological order from the loss.
  std::vector<Impl*> order;
  std::unordered_set<Impl*> visited;
  std::vector<std::pair<Impl*, std::size_t>> stack{{impl_.get(), 0}};
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->node && next < impl->node->inputs.size()) {
      Impl* child = impl->node->inputs[next++].impl_.get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }
  for (Impl* impl : order) {
    if (impl->node && impl->node->consumed) {
      throw StateError("graph through '" + impl->node->op + "' was already swept by backward()");
    }
  }

  if (impl_->grad.empty()) impl_->grad.assign(1, Scalar(0));
  impl_->grad[0] += Scalar(1);

  std::vector<std::span<Scalar>> input_grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* impl = *it;
    if (!impl->node) continue;
    auto& node = *impl->node;
    if (impl->grad.empty()) impl->grad.assign(impl->data.size(), Scalar(0));
    input_grads.clear();
    for (auto& input : node.inputs) {
      input_grads.push_back(input.requires_grad() ? input.grad_buffer() : std::span<Scalar>{});
    }
    node.backward(impl->grad, input_grads);
    node.backward = nullptr;  // frees saved intermediates
    node.consumed = true;
    Buffer<Scalar>().swap(impl->grad);
  }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace glam
