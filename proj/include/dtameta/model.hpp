#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

namespace dtameta {

/// Bivariate normal random effects on (logit se, logit sp).
struct BivariateParams {
  double mu1 = 0.0;
  double mu2 = 0.0;
  double tau1 = 1.0;
  double tau2 = 1.0;
  double rho = 0.0;
};

inline constexpr int kModelDim = 5;

/// Working scale (mu1, mu2, log tau1, log tau2, atanh rho).
Eigen::VectorXd to_working(const BivariateParams& p);
/// Reads the first five entries of a working vector.
BivariateParams from_working(const Eigen::VectorXd& theta);

Eigen::Matrix2d between_covariance(const BivariateParams& p);

/// Parameters of the arm-swapped problem.
BivariateParams swap_params(const BivariateParams& p);

enum class FitMethod { ml, reml, glmm };

std::string_view to_string(FitMethod method);
FitMethod fit_method_from_string(std::string_view name);

struct BivariateFit {
  BivariateParams params;
  // Working-scale covariance (5x5; block diagonal for REML).
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(kModelDim, kModelDim);
  bool cov_available = false;
  double loglik = 0.0;
  FitMethod method = FitMethod::ml;
  bool converged = false;
  int n_iter = 0;
  double gradient_norm = 0.0;
  bool boundary = false;
  std::vector<std::string> warnings;
  int quadrature_nodes = 0;  // GLMM only
  bool quadrature_adaptive = false;

  Eigen::Matrix2d mu_cov() const { return cov.topLeftCorner<2, 2>(); }
  /// Delta-method covariance of (mu1, mu2, tau1, tau2, rho).
  Eigen::MatrixXd natural_cov() const;
};

void to_json(nlohmann::json& j, const BivariateParams& p);
void to_json(nlohmann::json& j, const BivariateFit& f);

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);

}  // namespace dtameta
