#pragma once

#include <functional>
#include <optional>

#include <Eigen/Core>

namespace dtameta {

struct OptimOptions {
  double gradient_tolerance = 1e-6;
  double step_tolerance = 1e-8;
  int max_iter = 500;
  int simplex_max_iter = 4000;
  double simplex_tolerance = 1e-9;
  double simplex_scale = 0.2;
  /// Relative finite-difference step used for Hessians.
  double hessian_step = 1e-5;
};

using Objective = std::function<double(const Eigen::VectorXd&)>;
using Gradient = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct MinimizeResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Central-difference gradient; non-finite neighbours fall back to one-sided differences.
Eigen::VectorXd numeric_gradient(const Objective& f, const Eigen::VectorXd& x,
                                 double relative_step = 6e-6);

/// Symmetrised Jacobian of `grad` by central differences.
Eigen::MatrixXd hessian_from_gradient(const Gradient& grad, const Eigen::VectorXd& x,
                                      double relative_step);

/// Second differences of `f` (four-point formula off the diagonal).
Eigen::MatrixXd hessian_from_values(const Objective& f, const Eigen::VectorXd& x,
                                    double relative_step);

/// Derivative-free Nelder-Mead. Non-finite values are treated as +infinity.
MinimizeResult nelder_mead(const Objective& f, const Eigen::VectorXd& x0,
                           const OptimOptions& opts);

/// BFGS with backtracking line search. Uses `grad` when given, numeric gradients otherwise.
MinimizeResult bfgs(const Objective& f, const std::optional<Gradient>& grad,
                    const Eigen::VectorXd& x0, const OptimOptions& opts);

/// Simplex search refined by quasi-Newton; converged iff the final gradient norm is
/// within tolerance.
MinimizeResult minimize(const Objective& f, const std::optional<Gradient>& grad,
                        const Eigen::VectorXd& x0, const OptimOptions& opts);

/// Inverse of a symmetric matrix if it is positive definite.
std::optional<Eigen::MatrixXd> inverse_if_positive_definite(const Eigen::MatrixXd& m);

}  // namespace dtameta
