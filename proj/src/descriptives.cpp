#include "dtameta/descriptives.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dtameta/error.hpp"
#include "dtameta/numeric.hpp"

namespace dtameta {
namespace {

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::options, "alpha must lie in (0, 1)");
}

Interval logit_wald(double y, double var, double z) {
  const double half = z * std::sqrt(var);
  return {expit(y), expit(y - half), expit(y + half)};
}

Interval log_wald(double log_est, double var, double z) {
  const double half = z * std::sqrt(var);
  return {std::exp(log_est), std::exp(log_est - half), std::exp(log_est + half)};
}

}  // namespace

std::vector<StudyMetrics> study_metrics(const BivariateSample& sample,
                                        const CorrectedTable& corrected, double alpha) {
  if (sample.empty()) throw Error(ErrorCode::empty, "no studies");
  if (corrected.size() != sample.size()) {
    throw Error(ErrorCode::value, "sample and corrected table differ in length");
  }
  check_alpha(alpha);
  const double z = normal_quantile(1.0 - alpha / 2.0);
  std::vector<StudyMetrics> out;
  out.reserve(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const auto& p = sample.points[i];
    const auto& c = corrected.studies[i];
    StudyMetrics m;
    m.id = sample.ids[i];
    m.se = logit_wald(p.y1, p.s1sq, z);
    m.sp = logit_wald(p.y2, p.s2sq, z);
    const double ln_dor = p.y1 + p.y2;
    const double half = z * std::sqrt(p.s1sq + p.s2sq);
    m.ln_dor = {ln_dor, ln_dor - half, ln_dor + half};

    const double se = m.se.estimate;
    const double sp = m.sp.estimate;
    const double var_lr_pos = 1.0 / c.tp - 1.0 / (c.tp + c.fn) + 1.0 / c.fp - 1.0 / (c.fp + c.tn);
    const double var_lr_neg = 1.0 / c.fn - 1.0 / (c.tp + c.fn) + 1.0 / c.tn - 1.0 / (c.tn + c.fp);
    m.lr_pos = log_wald(std::log(se / (1.0 - sp)), var_lr_pos, z);
    m.lr_neg = log_wald(std::log((1.0 - se) / sp), var_lr_neg, z);
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<ScatterDatum> scatter_data(const BivariateSample& sample, ScatterShape shape,
                                       double alpha, int n_points) {
  if (sample.empty()) throw Error(ErrorCode::empty, "no studies");
  check_alpha(alpha);
  n_points = std::max(n_points, 64);
  const double z = normal_quantile(1.0 - alpha / 2.0);
  const double radius = std::sqrt(chi2_2df_quantile(1.0 - alpha));
  std::vector<ScatterDatum> out;
  out.reserve(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const auto& p = sample.points[i];
    ScatterDatum d;
    d.id = sample.ids[i];
    d.se = expit(p.y1);
    d.fpr = 1.0 - expit(p.y2);
    if (shape == ScatterShape::interval) {
      d.se_ci = logit_wald(p.y1, p.s1sq, z);
      const Interval sp = logit_wald(p.y2, p.s2sq, z);
      d.fpr_ci = {1.0 - sp.estimate, 1.0 - sp.upper, 1.0 - sp.lower};
    } else {
      // Within-study covariance is diagonal, so the ellipse axes align with the logit axes.
      const double a1 = radius * std::sqrt(p.s1sq);
      const double a2 = radius * std::sqrt(p.s2sq);
      d.region.reserve(n_points + 1);
      for (int k = 0; k <= n_points; ++k) {
        const double angle = 2.0 * std::numbers::pi * (k % n_points) / n_points;
        const double z1 = p.y1 + a1 * std::sin(angle);
        const double z2 = p.y2 + a2 * std::cos(angle);
        d.region.push_back({1.0 - expit(z2), expit(z1)});
      }
    }
    out.push_back(std::move(d));
  }
  return out;
}

ForestSeries forest_series(const std::vector<StudyMetrics>& metrics, ForestMetric which) {
  if (metrics.empty()) throw Error(ErrorCode::empty, "no studies");
  ForestSeries s;
  s.metric = which;
  std::vector<double> estimates;
  for (const auto& m : metrics) {
    const Interval* v = nullptr;
    switch (which) {
      case ForestMetric::se: v = &m.se; break;
      case ForestMetric::sp: v = &m.sp; break;
      case ForestMetric::ln_dor: v = &m.ln_dor; break;
      case ForestMetric::lr_pos: v = &m.lr_pos; break;
      case ForestMetric::lr_neg: v = &m.lr_neg; break;
    }
    s.rows.push_back({m.id, v->estimate, v->lower, v->upper});
    estimates.push_back(v->estimate);
  }
  s.min = *std::min_element(estimates.begin(), estimates.end());
  s.max = *std::max_element(estimates.begin(), estimates.end());
  s.median = median(estimates);
  return s;
}

std::string_view to_string(ForestMetric metric) {
  switch (metric) {
    case ForestMetric::se: return "se";
    case ForestMetric::sp: return "sp";
    case ForestMetric::ln_dor: return "lnDOR";
    case ForestMetric::lr_pos: return "lr_pos";
    case ForestMetric::lr_neg: return "lr_neg";
  }
  return "se";
}

ForestMetric forest_metric_from_string(std::string_view name) {
  for (auto m : {ForestMetric::se, ForestMetric::sp, ForestMetric::ln_dor, ForestMetric::lr_pos,
                 ForestMetric::lr_neg}) {
    if (name == to_string(m)) return m;
  }
  if (name == "lndor" || name == "ln_dor") return ForestMetric::ln_dor;
  throw Error(ErrorCode::options, "unknown forest metric '" + std::string(name) + "'");
}

std::string_view to_string(ScatterShape shape) {
  return shape == ScatterShape::interval ? "interval" : "region";
}

ScatterShape scatter_shape_from_string(std::string_view name) {
  if (name == "interval") return ScatterShape::interval;
  if (name == "region") return ScatterShape::region;
  throw Error(ErrorCode::options, "unknown scatter shape '" + std::string(name) + "'");
}

void to_json(nlohmann::json& j, const Interval& v) {
  j = {{"est", v.estimate}, {"lo", v.lower}, {"hi", v.upper}};
}

void to_json(nlohmann::json& j, const StudyMetrics& m) {
  j = {{"id", m.id},         {"se", m.se},         {"sp", m.sp},
       {"lnDOR", m.ln_dor},  {"lr_pos", m.lr_pos}, {"lr_neg", m.lr_neg}};
}

void to_json(nlohmann::json& j, const ScatterDatum& d) {
  j = {{"id", d.id}, {"fpr", d.fpr}, {"se", d.se}};
  if (d.region.empty()) {
    j["fpr_ci"] = d.fpr_ci;
    j["se_ci"] = d.se_ci;
  } else {
    j["region"] = d.region;
  }
}

void to_json(nlohmann::json& j, const ForestSeries& s) {
  j = nlohmann::json::object();
  j["metric"] = to_string(s.metric);
  auto& rows = j["rows"] = nlohmann::json::array();
  for (const auto& r : s.rows) rows.push_back({{"id", r.id}, {"est", r.est}, {"lo", r.lo}, {"hi", r.hi}});
  j["footer"] = {{"min", s.min}, {"median", s.median}, {"max", s.max}, {"pooled", false}};
}

}  // namespace dtameta
