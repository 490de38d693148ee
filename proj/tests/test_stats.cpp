#include <doctest.h>

#include <stdexcept>

#include "cmma/rng.hpp"
#include "cmma/stats.hpp"

namespace stats = cmma::stats;

TEST_CASE("chi-square p-values at tabulated quantiles") {
    // Critical values of the chi-square distribution.
    CHECK(stats::chi_square_p_value(3.841, 1) == doctest::Approx(0.05).epsilon(1e-3));
    CHECK(stats::chi_square_p_value(7.815, 3) == doctest::Approx(0.05).epsilon(1e-3));
    CHECK(stats::chi_square_p_value(24.725, 11) == doctest::Approx(0.01).epsilon(1e-3));
    CHECK(stats::chi_square_p_value(11.34, 3) == doctest::Approx(0.01).epsilon(1e-2));
    CHECK(stats::chi_square_p_value(0.0, 5) == 1.0);
}

TEST_CASE("regularized gamma endpoints") {
    CHECK(stats::regularized_gamma_p(2.5, 0.0) == 0.0);
    CHECK(stats::regularized_gamma_q(2.5, 0.0) == 1.0);
    CHECK(stats::regularized_gamma_p(1.0, 1.0) == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-12));
    CHECK_THROWS_AS(stats::regularized_gamma_p(0.0, 1.0), std::invalid_argument);
}

TEST_CASE("uniform counts fit, skewed counts do not") {
    cmma::Rng rng(100);
    std::vector<std::size_t> counts(10, 0);
    for (int i = 0; i < 20000; ++i) counts[rng.bounded(10)] += 1;
    const auto fit = stats::chi_square_uniform(counts);
    CHECK(fit.p_value > 0.01);

    std::vector<std::size_t> skewed(10, 100);
    skewed[0] = 600;
    CHECK(stats::chi_square_uniform(skewed).p_value < 1e-6);

    CHECK_THROWS_AS(stats::chi_square_uniform({5}), std::invalid_argument);
    CHECK_THROWS_AS(stats::chi_square_uniform({0, 0}), std::invalid_argument);
}
