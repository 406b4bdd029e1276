#pragma once

#include <span>

namespace dtameta {

double logit(double q);
/// Logistic function, evaluated without overflow for large |x|.
double expit(double x);
/// log(expit(x)), accurate in both tails.
double log_expit(double x);

double normal_cdf(double z);
/// log Phi(z); stays finite far into the lower tail.
double log_normal_cdf(double z);
double normal_quantile(double q);

/// Quantile of the chi-squared distribution with two degrees of freedom.
double chi2_2df_quantile(double level);

/// Two-sided p-value of a t statistic with `df` degrees of freedom.
double students_t_two_sided_p(double t, double df);

double log_binomial_coefficient(long long n, long long k);

double median(std::span<const double> values);

}  // namespace dtameta
