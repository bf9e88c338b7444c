#pragma once

#include <cstddef>
#include <span>

namespace cwr {

// Regularized lower incomplete gamma P(a, x); series expansion for
// x < a + 1, continued fraction otherwise.
double gamma_p(double a, double x);

// Standard normal quantile (Acklam's rational approximation refined by one
// Halley step); |error| well below 1e-12 over (0,1).
double normal_quantile(double p);

// Gamma(shape, rate) quantile via Wilson-Hilferty start + Newton on gamma_p.
double gamma_quantile(double p, double shape, double rate);

double mean(std::span<const double> v);
double sample_sd(std::span<const double> v);
double skewness(std::span<const double> v);
double excess_kurtosis(std::span<const double> v);

// One-way ANOVA intra-cluster correlation for equal-sized clusters laid out
// as `groups` consecutive blocks of `per_group` values.
double anova_icc(std::span<const double> values, std::size_t groups,
                 std::size_t per_group);

}  // namespace cwr
