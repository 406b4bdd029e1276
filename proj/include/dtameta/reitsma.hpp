#pragma once

#include <vector>

#include <Eigen/Core>

#include "dtameta/model.hpp"
#include "dtameta/optimize.hpp"
#include "dtameta/study_table.hpp"

namespace dtameta {

/// -sum_i log N2(y_i; mu, Sigma + diag(s1_i^2, s2_i^2)).
double reitsma_nll(const BivariateParams& params, const BivariateSample& sample);

double reitsma_nll_working(const Eigen::VectorXd& theta, const BivariateSample& sample);

/// Analytic gradient of reitsma_nll_working.
Eigen::VectorXd reitsma_gradient_working(const Eigen::VectorXd& theta,
                                         const BivariateSample& sample);

/// Generalised least squares mean for the given between-study covariance.
Eigen::Vector2d gls_mean(const BivariateParams& params, const BivariateSample& sample);

/// Restricted negative log-likelihood; the means in `params` are ignored and replaced by
/// the GLS mean:
///   sum_i [log 2pi + 1/2 log|V_i| + 1/2 r_i' V_i^-1 r_i] + 1/2 log|sum_i V_i^-1| - log 2pi
double reml_nll(const BivariateParams& params, const BivariateSample& sample);

/// Moment estimate, then the same with rho = 0 and rho = -0.5.
std::vector<BivariateParams> reitsma_start_points(const BivariateSample& sample);

/// ML over the full working vector or REML over the variance components with the
/// profiled GLS mean. Throws E_NOFIT when M < 2 or no start yields a finite optimum.
BivariateFit fit_reitsma(const BivariateSample& sample, FitMethod method = FitMethod::ml,
                         const OptimOptions& opts = {});

}  // namespace dtameta
