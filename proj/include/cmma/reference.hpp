#pragma once

#include <cstddef>
#include <vector>

#include "cmma/tensor.hpp"

namespace cmma::ref {

// Serial reference kernels. Naive index-by-index loops, no OpenMP, written
// directly from the operation definitions. The tests compare the production
// kernels against these, and the benchmark times the two side by side.

Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor conv1x1_grad_x(const Tensor& weight, const Tensor& grad_out, std::size_t cin);
Tensor conv1x1_grad_weight(const Tensor& x, const Tensor& grad_out);

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad);

Tensor global_softmax(const Tensor& r);

/// out[n,k,d,h,w] = a[n,k,h,w] * f[n,d,h,w]
Tensor weight_features(const Tensor& a, const Tensor& f);

/// fhat[n,d,h,w] = f[n,d,h,w] + max_k x[n,k,d,h,w]
Tensor fuse_frames(const Tensor& x, const Tensor& f);

Tensor pairwise_distances(const Tensor& q, const Tensor& g);

}  // namespace cmma::ref
