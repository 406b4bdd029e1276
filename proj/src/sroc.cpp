#include "dtameta/sroc.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "dtameta/error.hpp"
#include "dtameta/numeric.hpp"
#include "dtameta/quadrature.hpp"

namespace dtameta {
namespace {

constexpr double kDegenerateTau = 1e-8;
constexpr double kSmoothing = 3.0;

}  // namespace

std::string_view to_string(CurveKind kind) { return kind == CurveKind::sroc ? "sroc" : "hsroc"; }

CurveKind curve_kind_from_string(std::string_view name) {
  if (name == "sroc") return CurveKind::sroc;
  if (name == "hsroc") return CurveKind::hsroc;
  throw Error(ErrorCode::options, "unknown curve kind '" + std::string(name) + "'");
}

bool is_degenerate_curve(const BivariateParams& params) { return !(params.tau2 > kDegenerateTau); }

double sroc_sensitivity(const BivariateParams& p, CurveKind kind, double fpr) {
  if (is_degenerate_curve(p)) return expit(p.mu1);
  const double r = kind == CurveKind::sroc ? p.rho : -1.0;
  // logit(1 - x) = -logit(x)
  return expit(p.mu1 + r * (p.tau1 / p.tau2) * (-logit(fpr) - p.mu2));
}

SrocCurve sroc_curve(const BivariateParams& params, CurveKind kind, int grid_n) {
  if (grid_n < 2) throw Error(ErrorCode::options, "curve grid needs at least two points");
  SrocCurve c;
  c.kind = kind;
  c.params = params;
  c.degenerate = is_degenerate_curve(params);
  c.points.reserve(grid_n);
  for (int j = 1; j <= grid_n; ++j) {
    const double x = static_cast<double>(j) / (grid_n + 1);
    c.points.push_back({x, sroc_sensitivity(params, kind, x)});
  }
  return c;
}

double sauc_value(const BivariateParams& params, CurveKind kind, const SaucDomain& domain, int nodes) {
  if (!(domain.lo >= 0.0 && domain.hi <= 1.0 && domain.lo < domain.hi)) {
    throw Error(ErrorCode::options, "SAUC domain must satisfy 0 <= lo < hi <= 1");
  }
  const double width = domain.hi - domain.lo;
  const QuadratureRule& rule = gauss_legendre_unit(nodes);
  double total = 0.0;
  for (std::size_t j = 0; j < rule.nodes.size(); ++j) {
    const double s = rule.nodes[j];
    // psi(s) = s^k / (s^k + (1-s)^k) flattens the integrand at both endpoints
    const double psi = expit(kSmoothing * logit(s));
    const double dpsi = kSmoothing * psi * (1.0 - psi) / (s * (1.0 - s));
    const double x = domain.lo + width * psi;
    if (!(x > 0.0 && x < 1.0)) continue;
    total += rule.weights[j] * sroc_sensitivity(params, kind, x) * width * dpsi;
  }
  return domain.normalized ? total / width : total;
}

SaucEstimate sauc(const BivariateParams& params, const Eigen::MatrixXd& working_cov, bool cov_available,
                  CurveKind kind, const SaucDomain& domain, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::options, "alpha must lie in (0, 1)");
  SaucEstimate est;
  est.kind = kind;
  est.domain = domain;
  est.degenerate = is_degenerate_curve(params);
  est.value = sauc_value(params, kind, domain);
  est.lower = est.upper = est.value;
  if (!cov_available || est.value <= 0.0 || est.value >= 1.0) return est;

  const Eigen::VectorXd theta = to_working(params);
  Eigen::VectorXd grad(kModelDim);
  for (int i = 0; i < kModelDim; ++i) {
    const double h = 1e-5 * std::max(1.0, std::fabs(theta[i]));
    Eigen::VectorXd tp = theta;
    Eigen::VectorXd tm = theta;
    tp[i] += h;
    tm[i] -= h;
    grad[i] = (logit(sauc_value(from_working(tp), kind, domain)) -
               logit(sauc_value(from_working(tm), kind, domain))) /
              (2.0 * h);
  }
  const double var = grad.dot(working_cov.topLeftCorner(kModelDim, kModelDim) * grad);
  if (!(var >= 0.0) || !std::isfinite(var)) return est;
  const double half = normal_quantile(1.0 - alpha / 2.0) * std::sqrt(var);
  const double center = logit(est.value);
  est.lower = expit(center - half);
  est.upper = expit(center + half);
  est.ci_available = true;
  return est;
}

SaucEstimate sauc(const BivariateFit& fit, CurveKind kind, const SaucDomain& domain, double alpha) {
  return sauc(fit.params, fit.cov, fit.cov_available, kind, domain, alpha);
}

SopEstimate sop(const BivariateParams& params, const Eigen::Matrix2d& mu_cov, double alpha,
                int n_points) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::options, "alpha must lie in (0, 1)");
  Eigen::LLT<Eigen::Matrix2d> llt(0.5 * (mu_cov + mu_cov.transpose()));
  if (llt.info() != Eigen::Success || !(mu_cov.determinant() > 0.0)) {
    throw Error(ErrorCode::singular, "covariance of the mean estimates is not positive definite");
  }
  n_points = std::max(n_points, 64);
  SopEstimate out;
  out.se = expit(params.mu1);
  out.sp = expit(params.mu2);
  const Eigen::Matrix2d l = llt.matrixL();
  const double radius = std::sqrt(chi2_2df_quantile(1.0 - alpha));
  out.region.reserve(n_points + 1);
  for (int k = 0; k <= n_points; ++k) {
    const double angle = 2.0 * std::numbers::pi * (k % n_points) / n_points;
    const Eigen::Vector2d m =
        Eigen::Vector2d{params.mu1, params.mu2} + radius * (l * Eigen::Vector2d{std::cos(angle), std::sin(angle)});
    out.region.push_back({1.0 - expit(m[1]), expit(m[0])});
  }
  return out;
}

SopEstimate sop(const BivariateFit& fit, double alpha, int n_points) {
  if (!fit.cov_available) throw Error(ErrorCode::singular, "fit carries no covariance");
  return sop(fit.params, fit.mu_cov(), alpha, n_points);
}

void to_json(nlohmann::json& j, const SrocCurve& c) {
  j = {{"kind", to_string(c.kind)}, {"points", c.points}, {"degenerate", c.degenerate}};
}

void to_json(nlohmann::json& j, const SaucEstimate& s) {
  j = {{"value", s.value},
       {"lo", s.lower},
       {"hi", s.upper},
       {"kind", to_string(s.kind)},
       {"domain", {s.domain.lo, s.domain.hi}},
       {"normalized", s.domain.normalized},
       {"method", "delta-logit"},
       {"ci_available", s.ci_available}};
}

void to_json(nlohmann::json& j, const SopEstimate& s) {
  j = {{"se", s.se}, {"sp", s.sp}, {"region", s.region}};
}

}  // namespace dtameta
