#include "dtameta/glmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "dtameta/error.hpp"
#include "dtameta/numeric.hpp"
#include "dtameta/quadrature.hpp"
#include "dtameta/reitsma.hpp"

namespace dtameta {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void check_config(const QuadratureConfig& q) {
  if (q.nodes_per_dim < 3 || q.nodes_per_dim % 2 == 0) {
    throw Error(ErrorCode::options, "nodes_per_dim must be an odd integer >= 3");
  }
}

struct StudyIntegrand {
  double tp, fn, tn, fp;
  double log_coef;
  Eigen::Vector2d mu;
  Eigen::Matrix2d prec;
  double log_norm;  // log of the bivariate normal normalising constant

  // log of binomial likelihoods times the random-effect density
  double operator()(const Eigen::Vector2d& eta) const {
    const Eigen::Vector2d r = eta - mu;
    return log_coef + tp * log_expit(eta[0]) + fn * log_expit(-eta[0]) +
           tn * log_expit(eta[1]) + fp * log_expit(-eta[1]) + log_norm -
           0.5 * r.dot(prec * r);
  }

  double binomial_part(const Eigen::Vector2d& eta) const {
    return log_coef + tp * log_expit(eta[0]) + fn * log_expit(-eta[0]) +
           tn * log_expit(eta[1]) + fp * log_expit(-eta[1]);
  }
};

// Symmetric square root; unlike a Cholesky factor it commutes with swapping the two axes.
std::optional<Eigen::Matrix2d> symmetric_sqrt(const Eigen::Matrix2d& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig;
  eig.computeDirect(m);
  if (eig.info() != Eigen::Success || !(eig.eigenvalues().minCoeff() > 0.0)) return std::nullopt;
  const Eigen::Vector2d root = eig.eigenvalues().cwiseSqrt();
  return Eigen::Matrix2d(eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose());
}

}  // namespace

double glmm_study_loglik(const BivariateParams& params, const StudyRecord& s,
                         const QuadratureConfig& q) {
  check_config(q);
  const Eigen::Matrix2d sigma = between_covariance(params);
  Eigen::LLT<Eigen::Matrix2d> sigma_llt(sigma);
  if (sigma_llt.info() != Eigen::Success || !(sigma.determinant() > 0.0)) {
    throw Error(ErrorCode::singular, "between-study covariance is not positive definite");
  }

  StudyIntegrand g;
  g.tp = static_cast<double>(s.tp);
  g.fn = static_cast<double>(s.fn);
  g.tn = static_cast<double>(s.tn);
  g.fp = static_cast<double>(s.fp);
  g.log_coef = log_binomial_coefficient(s.n_diseased(), s.tp) +
               log_binomial_coefficient(s.n_healthy(), s.tn);
  g.mu = {params.mu1, params.mu2};
  g.prec = sigma.inverse();
  g.log_norm = -kLog2Pi - 0.5 * std::log(sigma.determinant());

  const QuadratureRule& rule = gauss_hermite(q.nodes_per_dim);
  const int n = q.nodes_per_dim;

  if (!q.adaptive) {
    // eta = mu + sqrt(2) R x with R R = Sigma
    const auto root = symmetric_sqrt(sigma);
    if (!root) throw Error(ErrorCode::singular, "between-study covariance is not positive definite");
    const Eigen::Matrix2d l = *root;
    double max_term = -std::numeric_limits<double>::infinity();
    std::vector<double> terms;
    terms.reserve(n * n);
    for (int j = 0; j < n; ++j) {
      for (int k = 0; k < n; ++k) {
        const Eigen::Vector2d x{rule.nodes[j], rule.nodes[k]};
        const Eigen::Vector2d eta = g.mu + std::numbers::sqrt2 * (l * x);
        const double t = std::log(rule.weights[j] * rule.weights[k]) + g.binomial_part(eta);
        terms.push_back(t);
        max_term = std::max(max_term, t);
      }
    }
    double sum = 0.0;
    for (double t : terms) sum += std::exp(t - max_term);
    return max_term + std::log(sum) - std::log(std::numbers::pi);
  }

  // Damped Newton for the mode of the log-integrand.
  Eigen::Vector2d eta = g.mu;
  Eigen::Matrix2d neg_hess;
  double current = g(eta);
  bool converged = false;
  for (int iter = 0; iter < q.max_iter_mode; ++iter) {
    const double p1 = expit(eta[0]);
    const double p2 = expit(eta[1]);
    const Eigen::Vector2d grad =
        Eigen::Vector2d{g.tp - (g.tp + g.fn) * p1, g.tn - (g.tn + g.fp) * p2} -
        g.prec * (eta - g.mu);
    neg_hess = g.prec;
    neg_hess(0, 0) += (g.tp + g.fn) * p1 * (1.0 - p1);
    neg_hess(1, 1) += (g.tn + g.fp) * p2 * (1.0 - p2);
    const Eigen::Vector2d step = neg_hess.ldlt().solve(grad);
    double scale = 1.0;
    Eigen::Vector2d next = eta + step;
    double value = g(next);
    while (!(value >= current - 1e-12 * std::fabs(current)) && scale > 1e-10) {
      scale *= 0.5;
      next = eta + scale * step;
      value = g(next);
    }
    eta = next;
    current = value;
    if ((scale * step).cwiseAbs().maxCoeff() < 1e-11) {
      converged = true;
      break;
    }
  }
  if (!converged || !eta.allFinite()) throw Error(ErrorCode::mode, "mode search did not converge for study '" + s.id + "'");
  {
    const double p1 = expit(eta[0]);
    const double p2 = expit(eta[1]);
    neg_hess = g.prec;
    neg_hess(0, 0) += (g.tp + g.fn) * p1 * (1.0 - p1);
    neg_hess(1, 1) += (g.tn + g.fp) * p2 * (1.0 - p2);
  }
  // eta = mode + sqrt(2) R x with R R = (-H)^-1
  const auto root = symmetric_sqrt(neg_hess.inverse());
  if (!root) throw Error(ErrorCode::singular, "curvature at the mode is not positive definite");
  const Eigen::Matrix2d l = *root;
  const double log_det_l = std::log(l.determinant());

  double sum = 0.0;
  for (int j = 0; j < n; ++j) {
    for (int k = 0; k < n; ++k) {
      const Eigen::Vector2d x{rule.nodes[j], rule.nodes[k]};
      const Eigen::Vector2d at = eta + std::numbers::sqrt2 * (l * x);
      sum += rule.weights[j] * rule.weights[k] * std::exp(g(at) - current + x.squaredNorm());
    }
  }
  return current + std::log(2.0 * sum) + log_det_l;
}

double glmm_nll(const BivariateParams& params, const StudyTable& table, const QuadratureConfig& q) {
  if (table.empty()) throw Error(ErrorCode::empty, "no studies");
  double nll = 0.0;
  for (const auto& s : table.studies) nll -= glmm_study_loglik(params, s, q);
  return nll;
}

BivariateFit fit_glmm(const StudyTable& input, const QuadratureConfig& q, const OptimOptions& opts) {
  const StudyTable table = canonical_order(input);
  check_config(q);
  if (table.size() < 2) {
    throw Error(ErrorCode::nofit, "at least two studies are required to fit the bivariate model");
  }
  for (const auto& s : table.studies) {
    if (s.n_diseased() < 1 || s.n_healthy() < 1) {
      throw Error(ErrorCode::arm, "study '" + s.id + "' has an empty arm");
    }
  }
  const double inf = std::numeric_limits<double>::infinity();
  const Objective f = [&](const Eigen::VectorXd& th) {
    try {
      const double v = glmm_nll(from_working(th), table, q);
      return std::isfinite(v) ? v : inf;
    } catch (const Error&) {
      return inf;
    }
  };

  // Starts: moment estimates on the all-studies corrected sample, and the normal-approximation
  // ML fit on the same sample.
  const BivariateSample approx = prepare_sample(table, CorrectionStrategy::all_studies);
  std::vector<Eigen::VectorXd> starts;
  for (const auto& s : reitsma_start_points(approx)) starts.push_back(to_working(s));
  try {
    const BivariateFit normal = fit_reitsma(approx, FitMethod::ml, opts);
    starts.insert(starts.begin(), to_working(normal.params));
  } catch (const Error&) {
  }

  OptimOptions local = opts;
  MinimizeResult best;
  best.value = inf;
  for (const auto& s : starts) {
    MinimizeResult r = bfgs(f, std::nullopt, s, local);
    if (!r.converged) {
      MinimizeResult polished = minimize(f, std::nullopt, r.x, local);
      if (polished.value <= r.value) {
        polished.iterations += r.iterations;
        r = std::move(polished);
      }
    }
    if (std::isfinite(r.value) && r.value < best.value) best = std::move(r);
  }
  if (!std::isfinite(best.value)) throw Error(ErrorCode::nofit, "no start point produced a finite likelihood");

  BivariateFit fit;
  fit.method = FitMethod::glmm;
  fit.quadrature_nodes = q.nodes_per_dim;
  fit.quadrature_adaptive = q.adaptive;
  fit.params = from_working(best.x);
  fit.loglik = -best.value;
  fit.converged = best.converged;
  fit.n_iter = best.iterations;
  fit.gradient_norm = best.gradient_norm;
  if (table.size() < 3) {
    fit.warnings.push_back("fewer than three studies: five parameters exceed the data support");
  }
  const Eigen::MatrixXd hess = hessian_from_values(f, best.x, 1e-4);
  if (auto inv = inverse_if_positive_definite(hess)) {
    fit.cov = *inv;
    fit.cov_available = true;
  } else {
    fit.warnings.push_back("observed information is not positive definite; covariance unavailable");
  }
  if (fit.params.tau1 < 1e-6 || fit.params.tau2 < 1e-6) {
    fit.boundary = true;
    fit.warnings.push_back("between-study SD estimated at the boundary (tau < 1e-6)");
  }
  if (!fit.converged) fit.warnings.push_back("optimizer did not reach the gradient tolerance");
  return fit;
}

}  // namespace dtameta
