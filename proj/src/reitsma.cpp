#include "dtameta/reitsma.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/LU>

#include "dtameta/error.hpp"

namespace dtameta {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

struct Sym2 {
  double a, b, c;  // [[a, b], [b, c]]
  double det() const { return a * c - b * b; }
};

Sym2 marginal_cov(const BivariateParams& p, const LogitPoint& pt) {
  const double cov = p.rho * p.tau1 * p.tau2;
  return {p.tau1 * p.tau1 + pt.s1sq, cov, p.tau2 * p.tau2 + pt.s2sq};
}

Sym2 inverse(const Sym2& v) {
  const double d = v.det();
  if (!(d > 0.0) || !(v.a > 0.0)) throw Error(ErrorCode::singular, "marginal covariance is not positive definite");
  return {v.c / d, -v.b / d, v.a / d};
}

void check_sample(const BivariateSample& sample) {
  if (sample.empty()) throw Error(ErrorCode::empty, "no studies");
}

}  // namespace

double reitsma_nll(const BivariateParams& params, const BivariateSample& sample) {
  check_sample(sample);
  double nll = 0.0;
  for (const auto& pt : sample.points) {
    const Sym2 v = marginal_cov(params, pt);
    const Sym2 w = inverse(v);
    const double r1 = pt.y1 - params.mu1;
    const double r2 = pt.y2 - params.mu2;
    const double q = w.a * r1 * r1 + 2.0 * w.b * r1 * r2 + w.c * r2 * r2;
    nll += kLog2Pi + 0.5 * std::log(v.det()) + 0.5 * q;
  }
  return nll;
}

double reitsma_nll_working(const Eigen::VectorXd& theta, const BivariateSample& sample) {
  return reitsma_nll(from_working(theta), sample);
}

Eigen::VectorXd reitsma_gradient_working(const Eigen::VectorXd& theta,
                                         const BivariateSample& sample) {
  check_sample(sample);
  const BivariateParams p = from_working(theta);
  const double t1 = p.tau1;
  const double t2 = p.tau2;
  const double c12 = p.rho * t1 * t2;
  // dV/d(log tau1), dV/d(log tau2), dV/d(atanh rho) as symmetric 2x2 matrices
  const Sym2 d_a{2.0 * t1 * t1, c12, 0.0};
  const Sym2 d_b{0.0, c12, 2.0 * t2 * t2};
  const Sym2 d_z{0.0, (1.0 - p.rho * p.rho) * t1 * t2, 0.0};

  Eigen::VectorXd g = Eigen::VectorXd::Zero(kModelDim);
  for (const auto& pt : sample.points) {
    const Sym2 w = inverse(marginal_cov(p, pt));
    const double r1 = pt.y1 - p.mu1;
    const double r2 = pt.y2 - p.mu2;
    const double u1 = w.a * r1 + w.b * r2;  // V^-1 r
    const double u2 = w.b * r1 + w.c * r2;
    g[0] -= u1;
    g[1] -= u2;
    // W = V^-1 - V^-1 r r' V^-1; dNLL = 1/2 tr(W dV)
    const Sym2 wm{w.a - u1 * u1, w.b - u1 * u2, w.c - u2 * u2};
    auto half_trace = [&](const Sym2& d) {
      return 0.5 * (wm.a * d.a + 2.0 * wm.b * d.b + wm.c * d.c);
    };
    g[2] += half_trace(d_a);
    g[3] += half_trace(d_b);
    g[4] += half_trace(d_z);
  }
  return g;
}

Eigen::Vector2d gls_mean(const BivariateParams& params, const BivariateSample& sample) {
  check_sample(sample);
  Eigen::Matrix2d info = Eigen::Matrix2d::Zero();
  Eigen::Vector2d score = Eigen::Vector2d::Zero();
  for (const auto& pt : sample.points) {
    const Sym2 w = inverse(marginal_cov(params, pt));
    info(0, 0) += w.a;
    info(0, 1) += w.b;
    info(1, 1) += w.c;
    score[0] += w.a * pt.y1 + w.b * pt.y2;
    score[1] += w.b * pt.y1 + w.c * pt.y2;
  }
  info(1, 0) = info(0, 1);
  return info.inverse() * score;
}

double reml_nll(const BivariateParams& params, const BivariateSample& sample) {
  check_sample(sample);
  BivariateParams p = params;
  const Eigen::Vector2d mu = gls_mean(params, sample);
  p.mu1 = mu[0];
  p.mu2 = mu[1];
  Sym2 info{0.0, 0.0, 0.0};
  for (const auto& pt : sample.points) {
    const Sym2 w = inverse(marginal_cov(p, pt));
    info.a += w.a;
    info.b += w.b;
    info.c += w.c;
  }
  return reitsma_nll(p, sample) + 0.5 * std::log(info.det()) - kLog2Pi;
}

std::vector<BivariateParams> reitsma_start_points(const BivariateSample& sample) {
  check_sample(sample);
  const double m = static_cast<double>(sample.size());
  double mean1 = 0.0, mean2 = 0.0, s1 = 0.0, s2 = 0.0;
  for (const auto& pt : sample.points) {
    mean1 += pt.y1;
    mean2 += pt.y2;
    s1 += pt.s1sq;
    s2 += pt.s2sq;
  }
  mean1 /= m;
  mean2 /= m;
  s1 /= m;
  s2 /= m;
  double v1 = 0.0, v2 = 0.0, c12 = 0.0;
  for (const auto& pt : sample.points) {
    v1 += (pt.y1 - mean1) * (pt.y1 - mean1);
    v2 += (pt.y2 - mean2) * (pt.y2 - mean2);
    c12 += (pt.y1 - mean1) * (pt.y2 - mean2);
  }
  const double denom = std::max(m - 1.0, 1.0);
  v1 /= denom;
  v2 /= denom;
  c12 /= denom;
  const double b1 = std::max(v1 - s1, 0.01);
  const double b2 = std::max(v2 - s2, 0.01);
  double rho = 0.0;
  if (v1 > 0.0 && v2 > 0.0) rho = std::clamp(c12 / std::sqrt(b1 * b2), -0.9, 0.9);

  BivariateParams moment{mean1, mean2, std::sqrt(b1), std::sqrt(b2), rho};
  BivariateParams uncorrelated = moment;
  uncorrelated.rho = 0.0;
  BivariateParams negative = moment;
  negative.rho = -0.5;
  return {moment, uncorrelated, negative};
}

BivariateFit fit_reitsma(const BivariateSample& input, FitMethod method,
                         const OptimOptions& opts) {
  const BivariateSample sample = canonical_order(input);
  if (method == FitMethod::glmm) throw Error(ErrorCode::options, "use fit_glmm for the GLMM");
  if (sample.size() < 2) {
    throw Error(ErrorCode::nofit, "at least two studies are required to fit the bivariate model");
  }
  BivariateFit fit;
  fit.method = method;
  if (sample.size() < 3) {
    fit.warnings.push_back("fewer than three studies: five parameters exceed the data support");
  }
  const auto starts = reitsma_start_points(sample);
  const double inf = std::numeric_limits<double>::infinity();

  if (method == FitMethod::ml) {
    const Objective f = [&](const Eigen::VectorXd& th) {
      try {
        return reitsma_nll_working(th, sample);
      } catch (const Error&) {
        return inf;
      }
    };
    const Gradient g = [&](const Eigen::VectorXd& th) {
      return reitsma_gradient_working(th, sample);
    };
    MinimizeResult best;
    best.value = inf;
    for (const auto& s : starts) {
      MinimizeResult r = minimize(f, g, to_working(s), opts);
      if (std::isfinite(r.value) && r.value < best.value) best = std::move(r);
    }
    if (!std::isfinite(best.value)) throw Error(ErrorCode::nofit, "no start point produced a finite likelihood");
    fit.params = from_working(best.x);
    fit.loglik = -best.value;
    fit.converged = best.converged;
    fit.n_iter = best.iterations;
    fit.gradient_norm = best.gradient_norm;
    const Eigen::MatrixXd hess = hessian_from_gradient(g, best.x, opts.hessian_step);
    if (auto inv = inverse_if_positive_definite(hess)) {
      fit.cov = *inv;
      fit.cov_available = true;
    }
  } else {
    auto expand = [](const Eigen::VectorXd& v) {
      Eigen::VectorXd th(kModelDim);
      th << 0.0, 0.0, v[0], v[1], v[2];
      return from_working(th);
    };
    const Objective f = [&](const Eigen::VectorXd& v) {
      try {
        return reml_nll(expand(v), sample);
      } catch (const Error&) {
        return inf;
      }
    };
    MinimizeResult best;
    best.value = inf;
    for (const auto& s : starts) {
      Eigen::VectorXd v0 = to_working(s).tail<3>();
      MinimizeResult r = minimize(f, std::nullopt, v0, opts);
      if (std::isfinite(r.value) && r.value < best.value) best = std::move(r);
    }
    if (!std::isfinite(best.value)) throw Error(ErrorCode::nofit, "no start point produced a finite likelihood");
    BivariateParams p = expand(best.x);
    const Eigen::Vector2d mu = gls_mean(p, sample);
    p.mu1 = mu[0];
    p.mu2 = mu[1];
    fit.params = p;
    fit.loglik = -best.value;
    fit.converged = best.converged;
    fit.n_iter = best.iterations;
    fit.gradient_norm = best.gradient_norm;

    Eigen::Matrix2d info = Eigen::Matrix2d::Zero();
    for (const auto& pt : sample.points) {
      const Sym2 w = inverse(marginal_cov(p, pt));
      info(0, 0) += w.a;
      info(0, 1) += w.b;
      info(1, 1) += w.c;
    }
    info(1, 0) = info(0, 1);
    const Eigen::MatrixXd hess = hessian_from_values(f, best.x, 1e-4);
    const auto var_inv = inverse_if_positive_definite(hess);
    const auto mu_inv = inverse_if_positive_definite(info);
    if (var_inv && mu_inv) {
      fit.cov.setZero();
      fit.cov.topLeftCorner<2, 2>() = *mu_inv;
      fit.cov.bottomRightCorner<3, 3>() = *var_inv;
      fit.cov_available = true;
    }
  }

  if (!fit.cov_available) {
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
