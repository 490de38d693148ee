#pragma once

#include <cstddef>
#include <vector>

#include "cmma/rng.hpp"
#include "cmma/tensor.hpp"

namespace testutil {

inline cmma::Tensor random_tensor(std::vector<std::size_t> shape, cmma::Rng& rng, double lo = -1.0,
                                  double hi = 1.0) {
    cmma::Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// A random strictly positive distribution (sums to 1).
inline cmma::Tensor random_distribution(std::vector<std::size_t> shape, cmma::Rng& rng) {
    cmma::Tensor t(std::move(shape));
    double sum = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = rng.uniform(0.05, 1.0);
        sum += t[i];
    }
    for (std::size_t i = 0; i < t.size(); ++i) t[i] /= sum;
    return t;
}

inline double max_abs_diff(const cmma::Tensor& a, const cmma::Tensor& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] > b[i] ? a[i] - b[i] : b[i] - a[i];
        if (d > worst) worst = d;
    }
    return worst;
}

}  // namespace testutil
