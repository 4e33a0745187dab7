#pragma once

#include <vector>

#include "mxq/tensor.hpp"

// Differentiable primitive set. Binary elementwise ops accept operands of
// identical shape, a one-element operand, or a rank-1 operand whose length
// equals the other operand's last dimension (row broadcast).
namespace mxq::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_constant(const Tensor& a, double value);

/// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// 2-D transpose.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
/// Elements [begin, end) along `axis`.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

/// Normalizes over the last dimension with population variance; eps is added
/// inside the square root. `gain` and `bias` have the last dimension's length.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
/// Softmax over the last dimension.
Tensor softmax(const Tensor& x);
/// Log-softmax over the last dimension (max-shifted).
Tensor log_softmax(const Tensor& x);
/// Tanh approximation of GELU.
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);

/// Sum of all elements, shape [1].
Tensor reduce_sum(const Tensor& x);
/// Mean of all elements, shape [1].
Tensor reduce_mean(const Tensor& x);

/// Identity on values; blocks gradient flow to `x`.
Tensor stop_gradient(const Tensor& x);

}  // namespace mxq::ops
