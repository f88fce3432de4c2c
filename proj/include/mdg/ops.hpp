#pragma once

#include <span>

#include "mdg/tensor.hpp"

namespace mdg::ops {

// Elementwise binary ops accept equal shapes, or a right operand whose shape
// equals the left shape minus its leading (batch) dimension.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double alpha);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// log(1 + exp(x)), stable for large |x|.
Tensor softplus(const Tensor& x);
Tensor square(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Sum of absolute values; subgradient 0 at 0.
Tensor l1_norm(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
// Keeps the leading dimension, collapses the rest.
Tensor flatten(const Tensor& x);
// Concatenates along the leading dimension.
Tensor concat(const std::vector<Tensor>& parts);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

// x: N×C×H×W, weight: O×C×k×k, bias: O (or an empty Tensor{} handle via nullptr overload).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, Conv2dOptions opt);
// Fractionally strided convolution. x: N×C×H×W, weight: C×O×k×k.
// Output side = (H − 1)·stride − 2·pad + k.
Tensor conv2d_transposed(const Tensor& x, const Tensor& weight, const Tensor* bias, Conv2dOptions opt);

// Per-sample, per-channel normalization over H×W with affine gain/bias (C each).
Tensor instance_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Mean categorical cross-entropy of N×K logits against labels in [0, K).
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad);

}  // namespace mdg::ops
