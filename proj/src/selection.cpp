#include "dtameta/selection.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>

#include "dtameta/error.hpp"
#include "dtameta/numeric.hpp"
#include "dtameta/reitsma.hpp"

namespace dtameta {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_p(double p) {
  if (!(p > 0.0 && p <= 1.0)) throw Error(ErrorCode::options, "p must lie in (0, 1]");
}

// Moments of the contrast c'y for one study: mean, sd and the t denominator.
struct ContrastMoments {
  double mean;
  double sd;
  double denom;
};

ContrastMoments contrast_moments(const BivariateParams& p, double s1sq, double s2sq, double c1,
                                 double c2) {
  const double denom2 = c1 * c1 * s1sq + c2 * c2 * s2sq;
  if (!(denom2 > 0.0)) throw Error(ErrorCode::degenerate, "zero denominator in the t statistic");
  const double var = c1 * c1 * (p.tau1 * p.tau1 + s1sq) + 2.0 * c1 * c2 * p.rho * p.tau1 * p.tau2 +
                     c2 * c2 * (p.tau2 * p.tau2 + s2sq);
  return {c1 * p.mu1 + c2 * p.mu2, std::sqrt(var), std::sqrt(denom2)};
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// Estimated-mode angle phi = (pi/2) sin^2(w) keeps phi in [0, pi/2] with both ends reachable.
double angle_from_free(double w) {
  const double s = std::sin(w);
  return 0.5 * std::numbers::pi * s * s;
}

double free_from_angle(double phi) {
  const double r = std::clamp(2.0 * phi / std::numbers::pi, 0.0, 1.0);
  return std::asin(std::sqrt(r));
}

double slope_from_free(double w) {
  const double s = std::sin(w);
  return kMaxProbitSlope * s * s;
}

double free_from_slope(double slope) {
  return std::asin(std::sqrt(std::clamp(slope / kMaxProbitSlope, 0.0, 1.0)));
}

// Root of a decreasing function on [lo, hi] by bisection, then safeguarded Newton to full
// precision so the profiled likelihood stays smooth enough for finite differences.
template <typename F, typename DF>
double decreasing_root(F h, DF dh, double lo, double hi) {
  while (hi - lo > 1e-7) {
    const double mid = 0.5 * (lo + hi);
    if (h(mid) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  double x = 0.5 * (lo + hi);
  for (int iter = 0; iter < 60; ++iter) {
    const double v = h(x);
    if (v == 0.0) return x;
    if (v > 0.0) {
      lo = x;
    } else {
      hi = x;
    }
    const double d = dh(x);
    double next = (d < 0.0 && std::isfinite(d)) ? x - v / d : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::fabs(next - x) <= 1e-15 * std::max(1.0, std::fabs(x))) return next;
    x = next;
  }
  return x;
}

}  // namespace

SelectionMechanism SelectionMechanism::preset(MechanismMode mode, SelectionForm form, double cutoff) {
  SelectionMechanism m;
  m.mode = mode;
  m.form = form;
  m.cutoff = cutoff;
  switch (mode) {
    case MechanismMode::sensitivity:
      m.c1 = 1.0;
      m.c2 = 0.0;
      break;
    case MechanismMode::specificity:
      m.c1 = 0.0;
      m.c2 = 1.0;
      break;
    case MechanismMode::ln_dor:
    case MechanismMode::estimated:
    case MechanismMode::custom:
      m.c1 = m.c2 = 1.0 / std::numbers::sqrt2;
      break;
  }
  return m;
}

SelectionMechanism SelectionMechanism::custom(double c1, double c2, SelectionForm form, double cutoff) {
  if (!(c1 >= 0.0 && c2 >= 0.0) || !std::isfinite(c1) || !std::isfinite(c2)) {
    throw Error(ErrorCode::options, "contrast coefficients must be finite and non-negative");
  }
  const double norm = std::hypot(c1, c2);
  if (!(norm > 0.0)) throw Error(ErrorCode::degenerate, "contrast coefficients are both zero");
  SelectionMechanism m;
  m.mode = MechanismMode::custom;
  m.c1 = c1 / norm;
  m.c2 = c2 / norm;
  m.form = form;
  m.cutoff = cutoff;
  return m;
}

std::string_view to_string(MechanismMode mode) {
  switch (mode) {
    case MechanismMode::estimated: return "estimated";
    case MechanismMode::ln_dor: return "lnDOR";
    case MechanismMode::sensitivity: return "sensitivity";
    case MechanismMode::specificity: return "specificity";
    case MechanismMode::custom: return "custom";
  }
  return "custom";
}

std::string_view to_string(SelectionForm form) { return form == SelectionForm::step ? "step" : "probit"; }

SelectionForm selection_form_from_string(std::string_view name) {
  const std::string n = lower(name);
  if (n == "step") return SelectionForm::step;
  if (n == "probit") return SelectionForm::probit;
  throw Error(ErrorCode::options, "unknown selection form '" + std::string(name) + "'");
}

SelectionMechanism mechanism_from_string(std::string_view name, SelectionForm form, double cutoff) {
  const std::string n = lower(name);
  if (n == "est" || n == "estimated") return SelectionMechanism::preset(MechanismMode::estimated, form, cutoff);
  if (n == "lndor" || n == "dor") return SelectionMechanism::preset(MechanismMode::ln_dor, form, cutoff);
  if (n == "se" || n == "sens" || n == "sensitivity") {
    return SelectionMechanism::preset(MechanismMode::sensitivity, form, cutoff);
  }
  if (n == "sp" || n == "spec" || n == "specificity") {
    return SelectionMechanism::preset(MechanismMode::specificity, form, cutoff);
  }
  if (n.rfind("custom:", 0) == 0) {
    const std::string rest = n.substr(7);
    const auto colon = rest.find(':');
    if (colon != std::string::npos) {
      double c1 = 0.0;
      double c2 = 0.0;
      const std::string a = rest.substr(0, colon);
      const std::string b = rest.substr(colon + 1);
      const auto ra = std::from_chars(a.data(), a.data() + a.size(), c1);
      const auto rb = std::from_chars(b.data(), b.data() + b.size(), c2);
      if (ra.ec == std::errc{} && rb.ec == std::errc{} && ra.ptr == a.data() + a.size() &&
          rb.ptr == b.data() + b.size()) {
        return SelectionMechanism::custom(c1, c2, form, cutoff);
      }
    }
  }
  throw Error(ErrorCode::options, "unknown mechanism '" + std::string(name) +
                                      "' (expected est, lndor, se, sp or custom:c1:c2)");
}

double t_statistic(double y1, double y2, double s1sq, double s2sq, double c1, double c2) {
  const double denom2 = c1 * c1 * s1sq + c2 * c2 * s2sq;
  if (!(denom2 > 0.0)) throw Error(ErrorCode::degenerate, "zero denominator in the t statistic");
  return (c1 * y1 + c2 * y2) / std::sqrt(denom2);
}

double t_statistic(const LogitPoint& pt, const SelectionMechanism& mech) {
  return t_statistic(pt.y1, pt.y2, pt.s1sq, pt.s2sq, mech.c1, mech.c2);
}

double significance_probability(const BivariateParams& params, double s1sq, double s2sq, double c1,
                                double c2, double cutoff) {
  const ContrastMoments m = contrast_moments(params, s1sq, s2sq, c1, c2);
  return normal_cdf((m.mean - cutoff * m.denom) / m.sd);
}

double study_publish_prob(const BivariateParams& params, double s1sq, double s2sq,
                          const SelectionMechanism& mech, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw Error(ErrorCode::options, "beta must lie in [0, 1]");
  const double q = significance_probability(params, s1sq, s2sq, mech.c1, mech.c2, mech.cutoff);
  return beta + (1.0 - beta) * q;
}

double solve_beta(const BivariateParams& params, const BivariateSample& sample,
                  const SelectionMechanism& mech, double p) {
  check_p(p);
  if (sample.empty()) throw Error(ErrorCode::empty, "no studies");
  if (p == 1.0) return 1.0;
  std::vector<double> q;
  q.reserve(sample.size());
  for (const auto& pt : sample.points) {
    q.push_back(significance_probability(params, pt.s1sq, pt.s2sq, mech.c1, mech.c2, mech.cutoff));
  }
  const double target = static_cast<double>(sample.size()) / p;
  auto h = [&](double b) {
    double s = 0.0;
    for (double qi : q) s += 1.0 / (b + (1.0 - b) * qi);
    return s - target;
  };
  auto dh = [&](double b) {
    double s = 0.0;
    for (double qi : q) {
      const double pi = b + (1.0 - b) * qi;
      s -= (1.0 - qi) / (pi * pi);
    }
    return s;
  };
  const double at_zero = h(0.0);
  if (at_zero < 0.0) {
    throw Error(ErrorCode::constraint,
                "mechanism cannot explain this much suppression: even beta = 0 publishes more "
                "than a fraction p of studies");
  }
  if (at_zero == 0.0) return 0.0;
  return std::clamp(decreasing_root(h, dh, 0.0, 1.0), 0.0, 1.0);
}

double solve_probit_intercept(const BivariateParams& params, const BivariateSample& sample,
                              const SelectionMechanism& mech, double slope, double p) {
  check_p(p);
  if (sample.empty()) throw Error(ErrorCode::empty, "no studies");
  if (p == 1.0) return kInf;
  std::vector<double> shift;   // slope * E[t]
  std::vector<double> scale;   // sqrt(1 + slope^2 Var[t])
  for (const auto& pt : sample.points) {
    const ContrastMoments m = contrast_moments(params, pt.s1sq, pt.s2sq, mech.c1, mech.c2);
    const double mt = m.mean / m.denom;
    const double st = m.sd / m.denom;
    shift.push_back(slope * mt);
    scale.push_back(std::sqrt(1.0 + slope * slope * st * st));
  }
  const double target = static_cast<double>(sample.size()) / p;
  auto h = [&](double a) {
    double s = 0.0;
    for (std::size_t i = 0; i < shift.size(); ++i) s += 1.0 / normal_cdf((a + shift[i]) / scale[i]);
    return s - target;
  };
  auto dh = [&](double a) {
    double s = 0.0;
    for (std::size_t i = 0; i < shift.size(); ++i) {
      const double z = (a + shift[i]) / scale[i];
      const double cdf = normal_cdf(z);
      const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
      s -= pdf / (cdf * cdf * scale[i]);
    }
    return s;
  };
  double lo = -1.0;
  double hi = 1.0;
  for (int k = 0; k < 80 && !(h(lo) > 0.0); ++k) lo = 2.0 * lo - 1.0;
  for (int k = 0; k < 80 && !(h(hi) < 0.0); ++k) hi = 2.0 * hi + 1.0;
  return decreasing_root(h, dh, lo, hi);
}

ConditionalTerms conditional_terms(const BivariateParams& params, const BivariateSample& sample,
                                   const SelectionMechanism& mech, double p, double slope) {
  check_p(p);
  ConditionalTerms out;
  out.nll = reitsma_nll(params, sample);
  if (mech.form == SelectionForm::probit) out.beta = slope;
  if (p == 1.0) {
    out.alpha = kInf;
    return out;
  }

  if (mech.form == SelectionForm::step) {
    const double beta = solve_beta(params, sample, mech, p);
    out.beta = beta;
    double penalty = 0.0;
    for (const auto& pt : sample.points) {
      const double t = t_statistic(pt, mech);
      if (t < mech.cutoff) {
        if (beta <= 0.0) {
          out.nll = kInf;  // E_LOGZERO
          return out;
        }
        penalty -= std::log(beta);
      }
      const double q = significance_probability(params, pt.s1sq, pt.s2sq, mech.c1, mech.c2, mech.cutoff);
      penalty += std::log(beta + (1.0 - beta) * q);
    }
    out.nll += penalty;
    return out;
  }

  const double alpha = solve_probit_intercept(params, sample, mech, slope, p);
  out.alpha = alpha;
  double penalty = 0.0;
  for (const auto& pt : sample.points) {
    const ContrastMoments m = contrast_moments(params, pt.s1sq, pt.s2sq, mech.c1, mech.c2);
    const double t = (mech.c1 * pt.y1 + mech.c2 * pt.y2) / m.denom;
    const double mt = m.mean / m.denom;
    const double st = m.sd / m.denom;
    penalty -= log_normal_cdf(alpha + slope * t);
    penalty += log_normal_cdf((alpha + slope * mt) / std::sqrt(1.0 + slope * slope * st * st));
  }
  out.nll += penalty;
  return out;
}

double conditional_nll(const BivariateParams& params, const BivariateSample& sample,
                       const SelectionMechanism& mech, double p, double slope) {
  return conditional_terms(params, sample, mech, p, slope).nll;
}

int implied_unpublished(int m_observed, double p) {
  check_p(p);
  const double m = static_cast<double>(m_observed);
  return static_cast<int>(std::floor(m / p - m + 1e-9));
}

std::vector<double> extended_p_grid() {
  std::vector<double> grid;
  for (int k = 10; k >= 1; --k) grid.push_back(k / 10.0);
  return grid;
}

namespace {

// Maps between the optimizer's free vector and (params, contrast, slope).
struct SelectionCodec {
  SelectionMechanism mech;
  bool estimated;  // contrast angle is free
  bool probit;     // probit slope is free
  SelectionStart base;  // values of the parameters that are held fixed

  int dim() const { return kModelDim + (estimated ? 1 : 0) + (probit ? 1 : 0); }

  Eigen::VectorXd encode(const SelectionStart& s) const {
    Eigen::VectorXd v(dim());
    v.head(kModelDim) = to_working(s.params);
    int k = kModelDim;
    if (estimated) v[k++] = free_from_angle(std::atan2(s.c2, s.c1));
    if (probit) v[k++] = free_from_slope(s.slope);
    return v;
  }

  SelectionStart decode(const Eigen::VectorXd& v) const {
    SelectionStart s = base;
    s.params = from_working(v);
    int k = kModelDim;
    if (estimated) {
      const double phi = angle_from_free(v[k++]);
      s.c1 = std::cos(phi);
      s.c2 = std::sin(phi);
    }
    if (probit) s.slope = slope_from_free(v[k++]);
    return s;
  }

  SelectionMechanism with_contrast(const SelectionStart& s) const {
    SelectionMechanism m = mech;
    m.c1 = s.c1;
    m.c2 = s.c2;
    return m;
  }
};

}  // namespace

SelectionFit fit_sensitivity(const BivariateSample& input, const SelectionMechanism& mech, double p,
                             const SensitivityOptions& opts, std::span<const SelectionStart> starts) {
  const BivariateSample sample = canonical_order(input);
  check_p(p);
  if (sample.size() < 2) throw Error(ErrorCode::nofit, "at least two studies are required");

  // At p = 1 the selection parameters drop out of the likelihood and stay at their start.
  const bool selecting = p < 1.0;
  SelectionCodec codec{mech, selecting && mech.mode == MechanismMode::estimated,
                       selecting && mech.form == SelectionForm::probit, {}};
  std::vector<SelectionStart> start_list(starts.begin(), starts.end());
  if (start_list.empty()) {
    const BivariateFit ml = fit_reitsma(sample, FitMethod::ml, opts.optim);
    start_list.push_back({ml.params, mech.c1, mech.c2, 1.0});
  }

  bool constraint_hit = false;
  const Objective f = [&](const Eigen::VectorXd& v) {
    const SelectionStart s = codec.decode(v);
    try {
      return conditional_nll(s.params, sample, codec.with_contrast(s), p, s.slope);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::constraint) constraint_hit = true;
      return kInf;
    }
  };

  struct Attempt {
    MinimizeResult result;
    SelectionStart base;
  };
  auto search = [&](const std::vector<SelectionStart>& list) {
    Attempt best;
    best.result.value = kInf;
    for (const auto& s : list) {
      codec.base = s;
      if (mech.mode != MechanismMode::estimated) {
        codec.base.c1 = mech.c1;
        codec.base.c2 = mech.c2;
      }
      if (mech.form != SelectionForm::probit) codec.base.slope = 1.0;
      Eigen::VectorXd v0 = codec.encode(codec.base);
      if (!std::isfinite(f(v0))) {
        // Move the means against the contrast until the constraint becomes attainable.
        bool feasible = false;
        for (double delta = 0.25; delta <= 64.0; delta *= 2.0) {
          Eigen::VectorXd v = v0;
          v[0] -= delta * codec.base.c1;
          v[1] -= delta * codec.base.c2;
          if (std::isfinite(f(v))) {
            v0 = v;
            feasible = true;
            break;
          }
        }
        if (!feasible) continue;
      }
      MinimizeResult r = minimize(f, std::nullopt, v0, opts.optim);
      if (std::isfinite(r.value) && r.value < best.result.value) {
        best.result = std::move(r);
        best.base = codec.base;
      }
    }
    return best;
  };

  Attempt best;
  if (codec.estimated && mech.form == SelectionForm::step) {
    // The step likelihood jumps whenever a study crosses the cutoff as the contrast turns,
    // so the angle is profiled: a grid, then golden-section refinement around the best node.
    codec.estimated = false;
    best.result.value = kInf;
    auto at_angle = [&](double phi) {
      std::vector<SelectionStart> list;
      for (SelectionStart s : start_list) {
        s.c1 = std::cos(phi);
        s.c2 = std::sin(phi);
        list.push_back(s);
      }
      if (std::isfinite(best.result.value)) {
        SelectionStart warm{from_working(best.result.x), std::cos(phi), std::sin(phi), 1.0};
        list.push_back(warm);
      }
      Attempt a = search(list);
      if (a.result.value < best.result.value) best = a;
      return a.result.value;
    };
    const double half_pi = 0.5 * std::numbers::pi;
    std::vector<double> nodes;
    for (int k = 0; k <= 16; ++k) nodes.push_back(half_pi * k / 16.0);
    for (const auto& s : start_list) nodes.push_back(std::clamp(std::atan2(s.c2, s.c1), 0.0, half_pi));
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    std::vector<double> values;
    for (double phi : nodes) values.push_back(at_angle(phi));
    const auto k = static_cast<std::size_t>(std::min_element(values.begin(), values.end()) - values.begin());
    if (std::isfinite(values[k])) {
      double lo = nodes[k > 0 ? k - 1 : 0];
      double hi = nodes[std::min(k + 1, nodes.size() - 1)];
      const double g = 0.5 * (std::sqrt(5.0) - 1.0);
      double a = hi - g * (hi - lo);
      double b = lo + g * (hi - lo);
      double fa = at_angle(a);
      double fb = at_angle(b);
      for (int iter = 0; iter < 14; ++iter) {
        if (fa <= fb) {
          hi = b;
          b = a;
          fb = fa;
          a = hi - g * (hi - lo);
          fa = at_angle(a);
        } else {
          lo = a;
          a = b;
          fa = fb;
          b = lo + g * (hi - lo);
          fb = at_angle(b);
        }
      }
    }
  } else {
    best = search(start_list);
  }
  if (!std::isfinite(best.result.value)) {
    if (constraint_hit) {
      throw Error(ErrorCode::constraint, "mechanism cannot explain this much suppression at p = " +
                                             std::to_string(p));
    }
    throw Error(ErrorCode::nofit, "no start point produced a finite conditional likelihood");
  }

  codec.base = best.base;
  const SelectionStart sol = codec.decode(best.result.x);
  const SelectionMechanism fitted_mech = codec.with_contrast(sol);
  const ConditionalTerms terms = conditional_terms(sol.params, sample, fitted_mech, p, sol.slope);

  SelectionFit fit;
  fit.mode = mech.mode;
  fit.form = mech.form;
  fit.params = sol.params;
  fit.c1 = sol.c1;
  fit.c2 = sol.c2;
  fit.beta = terms.beta;
  fit.alpha = terms.alpha;
  fit.p = p;
  fit.cond_loglik = -terms.nll;
  fit.converged = best.result.converged;
  fit.n_iter = best.result.iterations;
  fit.gradient_norm = best.result.gradient_norm;
  fit.n_unpublished = implied_unpublished(static_cast<int>(sample.size()), p);

  fit.cov = Eigen::MatrixXd::Zero(kModelDim, kModelDim);
  const Eigen::MatrixXd hess = hessian_from_values(f, best.result.x, 1e-4);
  if (auto inv = inverse_if_positive_definite(hess)) {
    fit.cov = inv->topLeftCorner(kModelDim, kModelDim);
    fit.cov_available = true;
  } else if (auto inner = inverse_if_positive_definite(hess.topLeftCorner(kModelDim, kModelDim))) {
    // Selection parameters not identified (e.g. p = 1): condition on them.
    fit.cov = *inner;
    fit.cov_available = true;
  }

  fit.sauc = sauc(fit.params, fit.cov, fit.cov_available, opts.curve, {}, opts.ci_alpha);
  if (fit.cov_available) {
    try {
      fit.sop = sop(fit.params, fit.cov.topLeftCorner<2, 2>(), opts.ci_alpha);
    } catch (const Error&) {
    }
  }
  fit.curve = sroc_curve(fit.params, opts.curve, opts.curve_points);
  return fit;
}

SensitivityGrid sensitivity_grid(const BivariateSample& sample,
                                 const std::vector<SelectionMechanism>& mechanisms,
                                 const std::vector<double>& p_values, const SensitivityOptions& opts,
                                 std::stop_token stop, const GridProgress& progress) {
  if (mechanisms.empty()) throw Error(ErrorCode::options, "no mechanisms requested");
  if (p_values.empty()) throw Error(ErrorCode::options, "no p values requested");
  for (std::size_t k = 0; k < p_values.size(); ++k) {
    check_p(p_values[k]);
    if (k > 0 && !(p_values[k] < p_values[k - 1])) {
      throw Error(ErrorCode::options, "p values must be strictly descending");
    }
  }

  SensitivityGrid grid;
  grid.mechanisms = mechanisms;
  grid.p_values = p_values;
  grid.kind = opts.curve;
  const std::size_t n_p = p_values.size();
  const std::size_t total = mechanisms.size() * n_p;
  grid.cells.resize(total);
  for (std::size_t m = 0; m < mechanisms.size(); ++m) {
    for (std::size_t k = 0; k < n_p; ++k) {
      grid.cells[m * n_p + k].mech_idx = m;
      grid.cells[m * n_p + k].p = p_values[k];
    }
  }

  std::optional<BivariateFit> baseline;
  std::string baseline_error;
  try {
    baseline = fit_reitsma(sample, FitMethod::ml, opts.optim);
  } catch (const Error& e) {
    for (auto& c : grid.cells) {
      c.error_code = std::string(code_name(e.code()));
      c.error_message = e.detail();
    }
    if (progress) progress(total, total);
    return grid;
  }

  // Fixed contrasts first so the estimated mode can start from them.
  std::vector<std::size_t> order;
  for (std::size_t m = 0; m < mechanisms.size(); ++m) {
    if (mechanisms[m].mode != MechanismMode::estimated) order.push_back(m);
  }
  for (std::size_t m = 0; m < mechanisms.size(); ++m) {
    if (mechanisms[m].mode == MechanismMode::estimated) order.push_back(m);
  }

  std::size_t done = 0;
  for (const std::size_t m : order) {
    const SelectionMechanism& mech = mechanisms[m];
    SelectionStart previous{baseline->params, mech.c1, mech.c2, 1.0};
    for (std::size_t k = 0; k < n_p; ++k) {
      GridCell& cell = grid.cells[m * n_p + k];
      if (stop.stop_requested()) {
        grid.cancelled = true;
        for (auto& c : grid.cells) {
          if (!c.fit && c.error_code.empty()) {
            c.error_code = "CANCELLED";
            c.error_message = "grid cancelled";
          }
        }
        return grid;
      }
      std::vector<SelectionStart> starts{previous};
      if (mech.mode == MechanismMode::estimated && p_values[k] < 1.0) {
        for (const std::size_t other : order) {
          const SelectionMechanism& om = mechanisms[other];
          if (om.mode == MechanismMode::estimated || om.form != mech.form || om.cutoff != mech.cutoff) {
            continue;
          }
          const GridCell& oc = grid.cells[other * n_p + k];
          if (oc.fit) starts.push_back(oc.fit->as_start());
        }
        for (const auto& [c1, c2] : {std::pair{1.0, 0.0}, std::pair{0.0, 1.0}}) {
          SelectionStart s = previous;
          s.c1 = c1;
          s.c2 = c2;
          starts.push_back(s);
        }
      }
      try {
        cell.fit = fit_sensitivity(sample, mech, p_values[k], opts, starts);
        previous = cell.fit->as_start();
      } catch (const Error& e) {
        cell.error_code = std::string(code_name(e.code()));
        cell.error_message = e.detail();
      }
      if (progress) progress(++done, total);
    }
  }
  return grid;
}

void to_json(nlohmann::json& j, const SelectionMechanism& m) {
  j = {{"mode", to_string(m.mode)},
       {"c1", m.c1},
       {"c2", m.c2},
       {"u", m.cutoff},
       {"form", to_string(m.form)}};
}

void to_json(nlohmann::json& j, const SelectionFit& f) {
  j = f.params;
  j["mode"] = to_string(f.mode);
  j["form"] = to_string(f.form);
  j["p"] = f.p;
  j["beta"] = f.beta;
  j["alpha"] = (f.form == SelectionForm::probit && std::isfinite(f.alpha)) ? nlohmann::json(f.alpha)
                                                                            : nlohmann::json(nullptr);
  j["c_hat"] = {f.c1, f.c2};
  j["sauc"] = {{"value", f.sauc.value}, {"lo", f.sauc.lower}, {"hi", f.sauc.upper},
               {"ci_available", f.sauc.ci_available}};
  if (f.sop) {
    j["sop"] = {f.sop->se, f.sop->sp};
    j["sop_region"] = f.sop->region;
  } else {
    j["sop"] = {expit(f.params.mu1), expit(f.params.mu2)};
    j["sop_region"] = nullptr;
  }
  j["curve"] = f.curve.points;
  j["n_unpublished"] = f.n_unpublished;
  j["cond_loglik"] = f.cond_loglik;
  j["converged"] = f.converged;
  j["n_iter"] = f.n_iter;
  j["gradient_norm"] = f.gradient_norm;
}

void to_json(nlohmann::json& j, const SensitivityGrid& g) {
  j = nlohmann::json::object();
  j["mechanisms"] = g.mechanisms;
  j["p_values"] = g.p_values;
  j["curve"] = to_string(g.kind);
  j["cancelled"] = g.cancelled;
  auto& cells = j["cells"] = nlohmann::json::array();
  for (const auto& c : g.cells) {
    nlohmann::json cell;
    if (c.fit) {
      cell = *c.fit;
    } else {
      cell["error"] = {{"code", c.error_code}, {"message", c.error_message}};
    }
    cell["mech_idx"] = c.mech_idx;
    cell["p"] = c.p;
    cells.push_back(std::move(cell));
  }
}

std::string grid_to_csv(const SensitivityGrid& g) {
  std::ostringstream out;
  out << "mech_idx,mode,form,c1,c2,u,p,mu1,mu2,tau1,tau2,rho,beta,alpha,c1_hat,c2_hat,"
         "sauc,sauc_lo,sauc_hi,sop_se,sop_sp,n_unpublished,cond_loglik,converged,error\n";
  auto num = [](double v) {
    if (!std::isfinite(v)) return std::string();
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& c : g.cells) {
    const SelectionMechanism& m = g.mechanisms.at(c.mech_idx);
    out << c.mech_idx << ',' << to_string(m.mode) << ',' << to_string(m.form) << ',' << num(m.c1)
        << ',' << num(m.c2) << ',' << num(m.cutoff) << ',' << num(c.p) << ',';
    if (c.fit) {
      const SelectionFit& f = *c.fit;
      const double se = expit(f.params.mu1);
      const double sp = expit(f.params.mu2);
      const double alpha = f.form == SelectionForm::probit ? f.alpha : std::nan("");
      out << num(f.params.mu1) << ',' << num(f.params.mu2) << ',' << num(f.params.tau1) << ','
          << num(f.params.tau2) << ',' << num(f.params.rho) << ',' << num(f.beta) << ','
          << num(alpha) << ',' << num(f.c1) << ',' << num(f.c2) << ',' << num(f.sauc.value) << ','
          << num(f.sauc.lower) << ',' << num(f.sauc.upper) << ',' << num(se) << ',' << num(sp)
          << ',' << f.n_unpublished << ',' << num(f.cond_loglik) << ','
          << (f.converged ? "true" : "false") << ",\n";
    } else {
      out << std::string(16, ',') << "false," << c.error_code << '\n';
    }
  }
  return out.str();
}

}  // namespace dtameta
