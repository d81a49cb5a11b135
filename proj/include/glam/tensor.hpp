#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

#include "glam/storage.hpp"

namespace glam {

/// Dimension sizes, outermost first. A rank-0 shape denotes a scalar.
using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename Scalar>
using RowMajorMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
class Tensor;

/// Backward rule of one recorded operation. `grad_out` is the gradient of the
/// loss w.r.t. the operation's output; `input_grads[i]` is the accumulation
/// buffer of input i, or an empty span when that input needs no gradient.
template <typename Scalar>
using BackwardFn = std::function<void(std::span<const Scalar> grad_out,
                                      std::span<std::span<Scalar>> input_grads)>;

namespace detail {

template <typename Scalar>
struct Node {
  std::string op;
  std::vector<Tensor<Scalar>> inputs;
  BackwardFn<Scalar> backward;
  bool consumed = false;
};

template <typename Scalar>
struct TensorImpl {
  Shape shape;
  Buffer<Scalar> data;
  Buffer<Scalar> grad;  // empty when absent
  bool requires_grad = false;
  std::shared_ptr<Node<Scalar>> node;
};

}  // namespace detail

/// Dense row-major n-dimensional array with optional gradient tracking.
///
/// A Tensor is a shared handle: copies refer to the same storage, and the
/// gradient buffer is visible through every copy. Use clone() for a deep copy.
/// Data is treated as immutable once the tensor takes part in a graph; only
/// leaves (parameters) are modified in place, by initializers and optimizers.
template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;

  Tensor() = default;
  Tensor(Shape shape, Buffer<Scalar> data, bool requires_grad = false);
  template <typename Alloc>
    requires(!std::is_same_v<Alloc, PoolAllocator<Scalar>>)
  Tensor(Shape shape, const std::vector<Scalar, Alloc>& data, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer<Scalar>(data.begin(), data.end()), requires_grad) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<const Scalar> data() const { return impl_->data; }
  std::span<Scalar> mutable_data() { return impl_->data; }
  Scalar item() const;
  Scalar at(std::size_t flat_index) const { return impl_->data.at(flat_index); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value);
  bool is_leaf() const { return impl_->node == nullptr; }
  const std::string& op() const;

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const Scalar> grad() const { return impl_->grad; }
  /// Gradient buffer, allocated and zero-filled on first access.
  std::span<Scalar> grad_buffer();
  void zero_grad() { impl_->grad.clear(); }

  /// Reverse-mode sweep from this scalar. Each recorded graph can be swept
  /// once; gradients accumulate into the leaves' buffers.
  void backward() const;

  /// Same data, no graph, no gradient tracking.
  Tensor detach() const;
  /// Deep copy of data and requires_grad flag; the copy is a fresh leaf.
  Tensor clone() const;

  template <typename Other>
  Tensor<Other> cast() const {
    Buffer<Other> out(size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<Other>(impl_->data[i]);
    return Tensor<Other>(shape(), std::move(out));
  }

  bool shares_storage(const Tensor& other) const { return impl_ == other.impl_; }

  /// Records an operation result. When no input requires a gradient the result
  /// is a plain untracked tensor and `backward` is dropped.
  static Tensor record(Shape shape, Buffer<Scalar> data, std::string op,
                       std::vector<Tensor> inputs, BackwardFn<Scalar> backward);

 private:
  std::shared_ptr<detail::TensorImpl<Scalar>> impl_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace glam
