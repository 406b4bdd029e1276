#pragma once

#include <functional>
#include <optional>
#include <span>
#include <stop_token>
#include <string>
#include <string_view>
#include <vector>

#include "dtameta/model.hpp"
#include "dtameta/optimize.hpp"
#include "dtameta/sroc.hpp"
#include "dtameta/study_table.hpp"
#include "json.hpp"

namespace dtameta {

// Selective publication driven by the t-type statistic of the contrast
//   t = (c1 y1 + c2 y2) / sqrt(c1^2 s1^2 + c2^2 s2^2).
//
// Two selection-function forms are available:
//   step    a(t) = 1 if t >= u, beta otherwise. beta is not free: it is re-solved at every
//           parameter value from the marginal constraint below.
//   probit  a(t) = Phi(alpha + beta t) with the slope beta in [0, 2] estimated and the
//           intercept alpha re-solved from the marginal constraint.
//
// The marginal selection probability p enters through the Horvitz-Thompson identity
//   sum_i 1 / P_i = M / p,
// where P_i is study i's publication probability under the model given its within-study
// variances. The conditional likelihood of the published studies is
//   sum_i [log N2(y_i; mu, V_i) + log a(t_i) - log P_i].

enum class MechanismMode { estimated, ln_dor, sensitivity, specificity, custom };
enum class SelectionForm { step, probit };

inline constexpr double kDefaultCutoff = 1.645;
inline constexpr double kMaxProbitSlope = 2.0;

struct SelectionMechanism {
  MechanismMode mode = MechanismMode::ln_dor;
  // Normalised contrast; for the estimated mode this is the starting direction.
  double c1 = 0.70710678118654752;
  double c2 = 0.70710678118654752;
  double cutoff = kDefaultCutoff;
  SelectionForm form = SelectionForm::probit;

  static SelectionMechanism preset(MechanismMode mode, SelectionForm form = SelectionForm::probit,
                                   double cutoff = kDefaultCutoff);
  /// Normalises (c1, c2) to unit length. Both must be >= 0 and not both zero.
  static SelectionMechanism custom(double c1, double c2, SelectionForm form = SelectionForm::probit,
                                   double cutoff = kDefaultCutoff);
};

std::string_view to_string(MechanismMode mode);
std::string_view to_string(SelectionForm form);
SelectionForm selection_form_from_string(std::string_view name);

/// Parses "est", "lndor", "se", "sp" (and long names) or "custom:c1:c2".
SelectionMechanism mechanism_from_string(std::string_view name,
                                         SelectionForm form = SelectionForm::probit,
                                         double cutoff = kDefaultCutoff);

/// Throws E_DEGENERATE on a zero denominator.
double t_statistic(double y1, double y2, double s1sq, double s2sq, double c1, double c2);
double t_statistic(const LogitPoint& pt, const SelectionMechanism& mech);

/// P(t >= u) for a study with the given within-study variances under the model.
double significance_probability(const BivariateParams& params, double s1sq, double s2sq,
                                double c1, double c2, double cutoff);

/// Step form: beta + (1 - beta) P(t >= u).
double study_publish_prob(const BivariateParams& params, double s1sq, double s2sq,
                          const SelectionMechanism& mech, double beta);

/// Step form: the beta in [0, 1] with sum_i 1/P_i = M/p. Throws E_CONSTRAINT when even
/// beta = 0 cannot reach M/p.
double solve_beta(const BivariateParams& params, const BivariateSample& sample,
                  const SelectionMechanism& mech, double p);

/// Probit form: the intercept alpha with sum_i 1/P_i = M/p for slope `slope`
/// (+infinity when p = 1).
double solve_probit_intercept(const BivariateParams& params, const BivariateSample& sample,
                              const SelectionMechanism& mech, double slope, double p);

struct ConditionalTerms {
  double nll = 0.0;
  double beta = 1.0;   // step probability, or probit slope
  double alpha = 0.0;  // probit intercept (unused by the step form)
};

/// Conditional negative log-likelihood with the selection parameter profiled from the
/// marginal constraint. Returns +infinity (E_LOGZERO) when beta = 0 and a published study is
/// non-significant. `slope` is only read by the probit form.
ConditionalTerms conditional_terms(const BivariateParams& params, const BivariateSample& sample,
                                   const SelectionMechanism& mech, double p, double slope = 1.0);
double conditional_nll(const BivariateParams& params, const BivariateSample& sample,
                       const SelectionMechanism& mech, double p, double slope = 1.0);

/// floor(M (1 - p) / p).
int implied_unpublished(int m_observed, double p);

struct SensitivityOptions {
  OptimOptions optim;
  CurveKind curve = CurveKind::sroc;
  double ci_alpha = 0.05;
  int curve_points = 201;
};

/// Starting point for one refit.
struct SelectionStart {
  BivariateParams params;
  double c1 = 0.70710678118654752;
  double c2 = 0.70710678118654752;
  double slope = 1.0;
};

struct SelectionFit {
  MechanismMode mode = MechanismMode::ln_dor;
  SelectionForm form = SelectionForm::probit;
  BivariateParams params;
  double beta = 1.0;
  double alpha = 0.0;
  double c1 = 0.0;  // fitted contrast when estimated
  double c2 = 0.0;
  double p = 1.0;
  double cond_loglik = 0.0;
  Eigen::MatrixXd cov;  // 5x5 working-scale covariance of the model parameters
  bool cov_available = false;
  SaucEstimate sauc;
  std::optional<SopEstimate> sop;
  SrocCurve curve;
  int n_unpublished = 0;
  bool converged = false;
  int n_iter = 0;
  double gradient_norm = 0.0;

  SelectionStart as_start() const { return {params, c1, c2, beta}; }
};

/// Refits the model under `mech` at marginal probability p. Without explicit starts the
/// normal-model ML estimate is used. Throws E_NOFIT or E_CONSTRAINT.
SelectionFit fit_sensitivity(const BivariateSample& sample, const SelectionMechanism& mech, double p,
                             const SensitivityOptions& opts = {},
                             std::span<const SelectionStart> starts = {});

struct GridCell {
  std::size_t mech_idx = 0;
  double p = 1.0;
  std::optional<SelectionFit> fit;
  std::string error_code;
  std::string error_message;
};

struct SensitivityGrid {
  std::vector<SelectionMechanism> mechanisms;
  std::vector<double> p_values;
  CurveKind kind = CurveKind::sroc;
  std::vector<GridCell> cells;  // mechanism-major, p-minor
  bool cancelled = false;

  const GridCell& cell(std::size_t mech_idx, std::size_t p_idx) const {
    return cells.at(mech_idx * p_values.size() + p_idx);
  }
};

using GridProgress = std::function<void(std::size_t done, std::size_t total)>;

inline const std::vector<double>& default_p_grid() {
  static const std::vector<double> grid{1.0, 0.8, 0.6, 0.4};
  return grid;
}
std::vector<double> extended_p_grid();  // 1, 0.9, ..., 0.1

/// Fits every (mechanism, p) cell. Warm starts cascade down each mechanism's p grid; the
/// estimated mode also starts from the fixed-contrast cells at the same p. Cell failures are
/// recorded in the cell. Cancellation is honoured between cells.
SensitivityGrid sensitivity_grid(const BivariateSample& sample,
                                 const std::vector<SelectionMechanism>& mechanisms,
                                 const std::vector<double>& p_values,
                                 const SensitivityOptions& opts = {}, std::stop_token stop = {},
                                 const GridProgress& progress = {});

void to_json(nlohmann::json& j, const SelectionMechanism& m);
void to_json(nlohmann::json& j, const SelectionFit& f);
void to_json(nlohmann::json& j, const SensitivityGrid& g);

/// One row per cell.
std::string grid_to_csv(const SensitivityGrid& g);

}  // namespace dtameta
