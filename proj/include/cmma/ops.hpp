#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "cmma/tensor.hpp"

namespace cmma::ops {

// Differentiable primitives. Every forward has an explicit backward that maps
// the output cotangent to input cotangents; backwards are linear in the
// cotangent and are checked against central finite differences in the tests.

/// out[d,h,w] = sum_c weight[d,c] * x[c,h,w] + bias[d].
Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct Conv1x1Grads {
    Tensor x;
    Tensor weight;
    Tensor bias;
};
Conv1x1Grads conv1x1_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out);

Tensor relu(const Tensor& x);
/// Subgradient at 0 is 0.
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

/// Softmax over every entry of the tensor jointly, with max subtraction.
Tensor global_softmax(const Tensor& r);
Tensor global_softmax_backward(const Tensor& softmax_out, const Tensor& grad_out);

/// Coordinatewise maximum of K same-shape tensors, K >= 1.
Tensor elementwise_max(const std::vector<Tensor>& xs);
/// Ties route the full cotangent to the lowest argmax index.
std::vector<Tensor> elementwise_max_backward(const std::vector<Tensor>& xs, const Tensor& grad_out);

/// Arithmetic mean over `axes`; the reduced axes are removed from the shape.
Tensor avg_pool(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor avg_pool_backward(const std::vector<std::size_t>& x_shape, const std::vector<std::size_t>& axes,
                         const Tensor& grad_out);

/// Spatial convolution for the backbone stages. x: C_in x H x W,
/// weight: C_out x C_in x KH x KW, bias: C_out. Zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad);

struct Conv2dGrads {
    Tensor x;
    Tensor weight;
    Tensor bias;
};
Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& weight, std::size_t stride, std::size_t pad,
                            const Tensor& grad_out);

/// A forward result bundled with its backward rule (cotangent of the output
/// to cotangents of the inputs, in input order).
struct DiffRecord {
    Tensor output;
    std::function<std::vector<Tensor>(const Tensor&)> backward;
};

DiffRecord conv1x1_vjp(const Tensor& x, const Tensor& weight, const Tensor& bias);
DiffRecord relu_vjp(const Tensor& x);
DiffRecord global_softmax_vjp(const Tensor& r);
DiffRecord elementwise_max_vjp(const std::vector<Tensor>& xs);
DiffRecord avg_pool_vjp(const Tensor& x, const std::vector<std::size_t>& axes);

/// A scalar-valued function of one tensor together with its analytic gradient.
/// `value` must return a size-1 tensor.
struct ScalarFunction {
    std::function<Tensor(const Tensor&)> value;
    std::function<Tensor(const Tensor&)> gradient;
};

/// Max over coordinates of |analytic - central difference| /
/// max(|analytic|, |central|, 1e-8).
double finite_diff_check(const ScalarFunction& f, const Tensor& x0, double step);

}  // namespace cmma::ops
