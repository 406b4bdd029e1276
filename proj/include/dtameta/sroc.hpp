#pragma once

#include <string_view>
#include <vector>

#include "dtameta/descriptives.hpp"
#include "dtameta/model.hpp"
#include "json.hpp"

namespace dtameta {

/// sroc uses the fitted correlation; hsroc fixes it at -1.
enum class CurveKind { sroc, hsroc };

std::string_view to_string(CurveKind kind);
CurveKind curve_kind_from_string(std::string_view name);

/// se(x) = expit(mu1 + r (tau1/tau2) (logit(1 - x) - mu2)), r = rho or -1.
/// With tau2 ~ 0 the curve degenerates to the constant expit(mu1).
double sroc_sensitivity(const BivariateParams& params, CurveKind kind, double fpr);

bool is_degenerate_curve(const BivariateParams& params);

struct SrocCurve {
  CurveKind kind = CurveKind::sroc;
  std::vector<RocPoint> points;  // (fpr, se), fpr strictly increasing
  BivariateParams params;
  bool degenerate = false;
};

/// `grid_n` equally spaced false positive rates j/(grid_n+1), j = 1..grid_n.
SrocCurve sroc_curve(const BivariateParams& params, CurveKind kind, int grid_n = 201);

struct SaucDomain {
  double lo = 0.0;
  double hi = 1.0;
  bool normalized = false;  // divide by (hi - lo)
};

struct SaucEstimate {
  double value = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  CurveKind kind = CurveKind::sroc;
  SaucDomain domain;
  bool degenerate = false;
  bool ci_available = false;
};

inline constexpr int kSaucNodes = 128;

/// Area under the curve over `domain` by Gauss-Legendre after the endpoint-smoothing
/// substitution x = lo + (hi - lo) expit(3 logit s).
double sauc_value(const BivariateParams& params, CurveKind kind, const SaucDomain& domain = {},
                  int nodes = kSaucNodes);

/// SAUC with a delta-method interval on the logit scale, using the working-scale covariance.
SaucEstimate sauc(const BivariateParams& params, const Eigen::MatrixXd& working_cov, bool cov_available,
                  CurveKind kind, const SaucDomain& domain = {}, double alpha = 0.05);
SaucEstimate sauc(const BivariateFit& fit, CurveKind kind, const SaucDomain& domain = {},
                  double alpha = 0.05);

struct SopEstimate {
  double se = 0.0;
  double sp = 0.0;
  std::vector<RocPoint> region;  // closed polyline in (fpr, se)
};

/// Summary operating point with the expit image of the confidence ellipse of (mu1, mu2).
/// Throws E_SINGULAR when that covariance is not positive definite.
SopEstimate sop(const BivariateParams& params, const Eigen::Matrix2d& mu_cov, double alpha = 0.05,
                int n_points = 64);
SopEstimate sop(const BivariateFit& fit, double alpha = 0.05, int n_points = 64);

void to_json(nlohmann::json& j, const SrocCurve& c);
void to_json(nlohmann::json& j, const SaucEstimate& s);
void to_json(nlohmann::json& j, const SopEstimate& s);

}  // namespace dtameta
