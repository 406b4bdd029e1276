#include "dtameta/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace dtameta {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double safe_eval(const Objective& f, const Eigen::VectorXd& x) {
  const double v = f(x);
  return std::isfinite(v) ? v : kInf;
}

double coordinate_step(double xi, double relative_step) {
  return relative_step * std::max(1.0, std::fabs(xi));
}

}  // namespace

Eigen::VectorXd numeric_gradient(const Objective& f, const Eigen::VectorXd& x,
                                 double relative_step) {
  const Eigen::Index n = x.size();
  Eigen::VectorXd g(n);
  Eigen::VectorXd xp = x;
  const double f0 = safe_eval(f, x);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double h = coordinate_step(x[i], relative_step);
    xp[i] = x[i] + h;
    const double fp = safe_eval(f, xp);
    xp[i] = x[i] - h;
    const double fm = safe_eval(f, xp);
    xp[i] = x[i];
    if (std::isfinite(fp) && std::isfinite(fm)) {
      g[i] = (fp - fm) / (2.0 * h);
    } else if (std::isfinite(fp)) {
      g[i] = (fp - f0) / h;
    } else if (std::isfinite(fm)) {
      g[i] = (f0 - fm) / h;
    } else {
      g[i] = 0.0;
    }
  }
  return g;
}

Eigen::MatrixXd hessian_from_gradient(const Gradient& grad, const Eigen::VectorXd& x,
                                      double relative_step) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd h(n, n);
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double step = coordinate_step(x[i], relative_step);
    xp[i] = x[i] + step;
    const Eigen::VectorXd gp = grad(xp);
    xp[i] = x[i] - step;
    const Eigen::VectorXd gm = grad(xp);
    xp[i] = x[i];
    h.col(i) = (gp - gm) / (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

Eigen::MatrixXd hessian_from_values(const Objective& f, const Eigen::VectorXd& x,
                                    double relative_step) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd h(n, n);
  const double f0 = f(x);
  Eigen::VectorXd steps(n);
  for (Eigen::Index i = 0; i < n; ++i) steps[i] = coordinate_step(x[i], relative_step);
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    xp[i] = x[i] + steps[i];
    const double fp = f(xp);
    xp[i] = x[i] - steps[i];
    const double fm = f(xp);
    xp[i] = x[i];
    h(i, i) = (fp - 2.0 * f0 + fm) / (steps[i] * steps[i]);
    for (Eigen::Index j = 0; j < i; ++j) {
      auto at = [&](double si, double sj) {
        xp[i] = x[i] + si * steps[i];
        xp[j] = x[j] + sj * steps[j];
        const double v = f(xp);
        xp[i] = x[i];
        xp[j] = x[j];
        return v;
      };
      const double v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) /
                       (4.0 * steps[i] * steps[j]);
      h(i, j) = h(j, i) = v;
    }
  }
  return h;
}

MinimizeResult nelder_mead(const Objective& f, const Eigen::VectorXd& x0,
                           const OptimOptions& opts) {
  const Eigen::Index n = x0.size();
  std::vector<Eigen::VectorXd> simplex(n + 1, x0);
  std::vector<double> values(n + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    simplex[i + 1][i] += opts.simplex_scale * std::max(1.0, std::fabs(x0[i]));
  }
  for (Eigen::Index i = 0; i <= n; ++i) values[i] = safe_eval(f, simplex[i]);

  std::vector<int> order(n + 1);
  int iter = 0;
  for (; iter < opts.simplex_max_iter; ++iter) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return values[a] < values[b]; });
    const int best = order.front();
    const int worst = order.back();
    const int second = order[n - 1];

    const double spread = values[worst] - values[best];
    if (std::isfinite(spread) &&
        spread <= opts.simplex_tolerance * (std::fabs(values[best]) + 1e-12)) {
      double diameter = 0.0;
      for (const auto& v : simplex) diameter = std::max(diameter, (v - simplex[best]).norm());
      if (diameter < 1e-7) break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int idx : order) {
      if (idx != worst) centroid += simplex[idx];
    }
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd reflected = centroid + (centroid - simplex[worst]);
    const double fr = safe_eval(f, reflected);
    if (fr < values[best]) {
      const Eigen::VectorXd expanded = centroid + 2.0 * (centroid - simplex[worst]);
      const double fe = safe_eval(f, expanded);
      if (fe < fr) {
        simplex[worst] = expanded;
        values[worst] = fe;
      } else {
        simplex[worst] = reflected;
        values[worst] = fr;
      }
      continue;
    }
    if (fr < values[second]) {
      simplex[worst] = reflected;
      values[worst] = fr;
      continue;
    }
    const bool outside = fr < values[worst];
    const Eigen::VectorXd contracted =
        outside ? Eigen::VectorXd(centroid + 0.5 * (reflected - centroid))
                : Eigen::VectorXd(centroid + 0.5 * (simplex[worst] - centroid));
    const double fc = safe_eval(f, contracted);
    if (fc < std::min(fr, values[worst])) {
      simplex[worst] = contracted;
      values[worst] = fc;
      continue;
    }
    // shrink toward the best vertex
    for (int idx = 0; idx <= n; ++idx) {
      if (idx == best) continue;
      simplex[idx] = simplex[best] + 0.5 * (simplex[idx] - simplex[best]);
      values[idx] = safe_eval(f, simplex[idx]);
    }
  }

  const auto best_it = std::min_element(values.begin(), values.end());
  MinimizeResult result;
  result.x = simplex[best_it - values.begin()];
  result.value = *best_it;
  result.iterations = iter;
  return result;
}

MinimizeResult bfgs(const Objective& f, const std::optional<Gradient>& grad,
                    const Eigen::VectorXd& x0, const OptimOptions& opts) {
  const Eigen::Index n = x0.size();
  const Gradient gradient = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return grad ? (*grad)(x) : numeric_gradient(f, x);
  };

  MinimizeResult r;
  r.x = x0;
  r.value = safe_eval(f, x0);
  r.gradient = gradient(x0);
  if (!std::isfinite(r.value)) {
    r.gradient_norm = kInf;
    return r;
  }
  Eigen::MatrixXd inv_h = Eigen::MatrixXd::Identity(n, n);
  bool scaled = false;
  int restarts = 0;
  int polishes = 0;

  // When the quasi-Newton model stalls short of the tolerance, rebuild it from a
  // finite-difference Hessian (eigenvalues floored so the step is a descent direction).
  auto polish = [&]() {
    if (polishes++ >= 4 || !r.gradient.allFinite()) return false;
    const Eigen::MatrixXd h = hessian_from_gradient(gradient, r.x, 1e-4);
    if (!h.allFinite()) return false;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h);
    Eigen::VectorXd ev = eig.eigenvalues().cwiseAbs();
    const double floor = std::max(1e-8, 1e-10 * ev.maxCoeff());
    for (Eigen::Index i = 0; i < n; ++i) ev[i] = 1.0 / std::max(ev[i], floor);
    inv_h = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
    scaled = true;
    return true;
  };

  // Near the optimum the predicted decrease falls below the rounding level of f, so a
  // polished Newton step is judged by the gradient norm instead of the value.
  auto newton_step = [&]() {
    if (!polish()) return false;
    const Eigen::VectorXd x_n = r.x - inv_h * r.gradient;
    const double f_n = safe_eval(f, x_n);
    if (!(f_n <= r.value + 1e-11 * (1.0 + std::fabs(r.value)))) return false;
    const Eigen::VectorXd g_n = gradient(x_n);
    if (!(g_n.norm() < r.gradient.norm())) return false;
    r.x = x_n;
    r.value = std::min(f_n, r.value);
    r.gradient = g_n;
    return true;
  };

  int iter = 0;
  for (; iter < opts.max_iter; ++iter) {
    if (r.gradient.norm() <= opts.gradient_tolerance) break;

    Eigen::VectorXd dir = -inv_h * r.gradient;
    double slope = r.gradient.dot(dir);
    if (!(slope < 0.0)) {
      inv_h.setIdentity();
      scaled = false;
      dir = -r.gradient;
      slope = r.gradient.dot(dir);
    }

    // Backtracking (Armijo) line search; the value must actually decrease.
    double alpha = 1.0;
    Eigen::VectorXd x_new;
    double f_new = kInf;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = r.x + alpha * dir;
      f_new = safe_eval(f, x_new);
      if (f_new < r.value && f_new <= r.value + 1e-4 * alpha * slope) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      if (newton_step()) continue;
      if (restarts++ < 2 && scaled) {
        inv_h.setIdentity();
        scaled = false;
        continue;
      }
      break;
    }

    const Eigen::VectorXd s = x_new - r.x;
    const Eigen::VectorXd g_new = gradient(x_new);
    const Eigen::VectorXd y = g_new - r.gradient;
    const double sy = s.dot(y);

    r.x = x_new;
    const double f_old = r.value;
    r.value = f_new;
    r.gradient = g_new;

    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        inv_h = Eigen::MatrixXd::Identity(n, n) * (sy / y.squaredNorm());
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd i_n = Eigen::MatrixXd::Identity(n, n);
      inv_h = (i_n - rho * s * y.transpose()) * inv_h * (i_n - rho * y * s.transpose()) +
              rho * s * s.transpose();
    }

    if (s.norm() < opts.step_tolerance * (1.0 + r.x.norm()) &&
        std::fabs(f_old - f_new) <= 1e-15 * (1.0 + std::fabs(f_new))) {
      if (r.gradient.norm() > opts.gradient_tolerance && newton_step()) continue;
      break;
    }
  }
  r.iterations = iter;
  r.gradient_norm = r.gradient.norm();
  r.converged = r.gradient_norm <= opts.gradient_tolerance;
  return r;
}

MinimizeResult minimize(const Objective& f, const std::optional<Gradient>& grad,
                        const Eigen::VectorXd& x0, const OptimOptions& opts) {
  const MinimizeResult simplex = nelder_mead(f, x0, opts);
  const Eigen::VectorXd start = std::isfinite(simplex.value) ? simplex.x : x0;
  MinimizeResult refined = bfgs(f, grad, start, opts);
  refined.iterations += simplex.iterations;
  return refined;
}

std::optional<Eigen::MatrixXd> inverse_if_positive_definite(const Eigen::MatrixXd& m) {
  if (!m.allFinite()) return std::nullopt;
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(sym);
  if (llt.info() != Eigen::Success) return std::nullopt;
  const Eigen::VectorXd d = llt.matrixL().toDenseMatrix().diagonal();
  if (d.minCoeff() <= 1e-12 * d.maxCoeff()) return std::nullopt;
  return llt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols()));
}

}  // namespace dtameta
