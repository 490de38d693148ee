#pragma once

#include <cstddef>
#include <vector>

namespace cmma::stats {

/// Regularized lower incomplete gamma P(a, x), a > 0, x >= 0.
double regularized_gamma_p(double a, double x);

/// Upper tail Q(a, x) = 1 - P(a, x).
double regularized_gamma_q(double a, double x);

/// Upper-tail p-value of a chi-square statistic with `dof` degrees of freedom.
double chi_square_p_value(double statistic, double dof);

struct ChiSquareFit {
    double statistic = 0.0;
    double dof = 0.0;
    double p_value = 1.0;
};

/// Goodness of fit of observed counts against the uniform distribution over
/// the cells. Requires at least two cells and a positive total.
ChiSquareFit chi_square_uniform(const std::vector<std::size_t>& counts);

}  // namespace cmma::stats
