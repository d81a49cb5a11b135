#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "glam/tensor.hpp"

namespace glam {

enum class BinaryKind { add, mul };
enum class Activation { relu, gelu };
enum class Mode { train, eval };

/// Elementwise a (+|*) b. Shapes must match, except that either operand may
/// hold a single element, which is broadcast.
template <typename Scalar>
Tensor<Scalar> elementwise_binary(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                                  BinaryKind kind);

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return elementwise_binary(a, b, BinaryKind::add);
}

template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return elementwise_binary(a, b, BinaryKind::mul);
}

/// Sum of all elements, as a rank-0 tensor.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x);

/// [m x k] . [k x n] -> [m x n]
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// x [batch x in] . w [in x out] + bias [out], bias broadcast over rows.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                      const Tensor<Scalar>& bias);

/// Stride-1 cross-correlation with zero "same" padding.
/// x [N x Cin x H x W], kernel [Cout x Cin x kh x kw] (odd kh, kw), bias [Cout]
/// or an undefined tensor for no bias.
template <typename Scalar>
Tensor<Scalar> conv2d_same(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel,
                           const Tensor<Scalar>& bias);

/// Running statistics of one batch-norm layer. The tensors are shared handles,
/// typically owned by a ParameterSet, and are updated in place in train mode.
template <typename Scalar>
struct BatchNormState {
  Tensor<Scalar> running_mean;
  Tensor<Scalar> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  bool initialized() const { return running_mean.defined() && running_var.defined(); }
  static BatchNormState fresh(std::size_t channels);
};

/// Per-channel normalization of x [N x C x H x W]. Train mode normalizes with
/// the biased batch variance and moves the running statistics (unbiased
/// variance) by `momentum`; eval mode uses the running statistics.
template <typename Scalar>
Tensor<Scalar> batchnorm2d(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                           const Tensor<Scalar>& beta, BatchNormState<Scalar>& state,
                           Mode mode);

/// Normalization over the last axis with affine gamma/beta of that axis' size.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, double eps = 1e-5);

/// GeLU is the tanh approximation
///   0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename Scalar>
Tensor<Scalar> activation(const Tensor<Scalar>& x, Activation kind);

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  return activation(x, Activation::relu);
}

template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
  return activation(x, Activation::gelu);
}

/// Non-overlapping max pooling; trailing rows/columns that do not fill a
/// window are dropped. Ties route the gradient to the lowest flat index.
template <typename Scalar>
Tensor<Scalar> maxpool2d(const Tensor<Scalar>& x, std::size_t pool_h, std::size_t pool_w);

template <typename Scalar>
Tensor<Scalar> concat(std::span<const Tensor<Scalar>> parts, std::size_t axis);

template <typename Scalar>
Tensor<Scalar> concat(std::initializer_list<Tensor<Scalar>> parts, std::size_t axis) {
  return concat(std::span<const Tensor<Scalar>>(parts.begin(), parts.size()), axis);
}

/// Contiguous slice [begin, begin + length) along `axis`.
template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& x, std::size_t axis, std::size_t begin,
                     std::size_t length);

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> split_half(const Tensor<Scalar>& x, std::size_t axis);

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape);

/// Mean over the batch of -sum_k target_k log softmax(logits)_k.
/// Target rows must be probability vectors (soft labels allowed).
template <typename Scalar>
Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits,
                                     const Tensor<Scalar>& target_probs);

/// Row-wise softmax of a [batch x K] tensor; untracked.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits);

}  // namespace glam
