#include "dtameta/model.hpp"

#include <cmath>

#include "dtameta/error.hpp"

namespace dtameta {

Eigen::VectorXd to_working(const BivariateParams& p) {
  Eigen::VectorXd theta(kModelDim);
  theta << p.mu1, p.mu2, std::log(p.tau1), std::log(p.tau2), std::atanh(p.rho);
  return theta;
}

BivariateParams from_working(const Eigen::VectorXd& theta) {
  return {theta[0], theta[1], std::exp(theta[2]), std::exp(theta[3]), std::tanh(theta[4])};
}

Eigen::Matrix2d between_covariance(const BivariateParams& p) {
  Eigen::Matrix2d s;
  const double c = p.rho * p.tau1 * p.tau2;
  s << p.tau1 * p.tau1, c, c, p.tau2 * p.tau2;
  return s;
}

BivariateParams swap_params(const BivariateParams& p) {
  return {p.mu2, p.mu1, p.tau2, p.tau1, p.rho};
}

std::string_view to_string(FitMethod method) {
  switch (method) {
    case FitMethod::ml: return "ml";
    case FitMethod::reml: return "reml";
    case FitMethod::glmm: return "glmm";
  }
  return "ml";
}

FitMethod fit_method_from_string(std::string_view name) {
  if (name == "ml") return FitMethod::ml;
  if (name == "reml") return FitMethod::reml;
  if (name == "glmm") return FitMethod::glmm;
  throw Error(ErrorCode::options, "unknown method '" + std::string(name) + "'");
}

Eigen::MatrixXd BivariateFit::natural_cov() const {
  Eigen::VectorXd jac(kModelDim);
  jac << 1.0, 1.0, params.tau1, params.tau2, 1.0 - params.rho * params.rho;
  return jac.asDiagonal() * cov * jac.asDiagonal();
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(std::move(row));
  }
  return rows;
}

void to_json(nlohmann::json& j, const BivariateParams& p) {
  j = {{"mu", {p.mu1, p.mu2}}, {"tau", {p.tau1, p.tau2}}, {"rho", p.rho}};
}

void to_json(nlohmann::json& j, const BivariateFit& f) {
  j = f.params;
  j["method"] = to_string(f.method);
  j["cov"] = f.cov_available ? matrix_to_json(f.natural_cov()) : nlohmann::json(nullptr);
  j["cov_working"] = f.cov_available ? matrix_to_json(f.cov) : nlohmann::json(nullptr);
  j["loglik"] = f.loglik;
  j["converged"] = f.converged;
  j["n_iter"] = f.n_iter;
  j["gradient_norm"] = f.gradient_norm;
  j["boundary"] = f.boundary;
  j["warnings"] = f.warnings;
  if (f.method == FitMethod::glmm) {
    j["quadrature"] = {{"nodes_per_dim", f.quadrature_nodes}, {"adaptive", f.quadrature_adaptive}};
  }
}

}  // namespace dtameta
