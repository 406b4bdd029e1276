#include "dtameta/funnel.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "dtameta/error.hpp"
#include "dtameta/numeric.hpp"

namespace dtameta {
namespace {

void check_pair(const BivariateSample& sample, const StudyTable& table) {
  if (sample.empty() || table.empty()) throw Error(ErrorCode::empty, "no studies");
  if (sample.size() != table.size()) {
    throw Error(ErrorCode::value, "transformed sample and table have different lengths");
  }
}

struct RegressionRow {
  double x;
  double y;
  double w;
};

}  // namespace

double effective_sample_size(long long n_diseased, long long n_healthy) {
  if (n_diseased <= 0 || n_healthy <= 0) throw Error(ErrorCode::arm, "empty arm");
  const double n1 = static_cast<double>(n_diseased);
  const double n0 = static_cast<double>(n_healthy);
  return 4.0 * n1 * n0 / (n1 + n0);
}

FunnelData funnel_data(const BivariateSample& sample, const StudyTable& table) {
  check_pair(sample, table);
  FunnelData out;
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const LogitPoint& pt = sample.points[i];
    const StudyRecord& r = table.studies[i];
    FunnelDatum d;
    d.id = i < sample.ids.size() ? sample.ids[i] : r.id;
    d.ln_dor = pt.y1 + pt.y2;
    d.ess = effective_sample_size(r.n_diseased(), r.n_healthy());
    d.inv_sqrt_ess = 1.0 / std::sqrt(d.ess);
    out.points.push_back(std::move(d));
  }
  // Sum in a canonical order so the pooled value is independent of row order.
  std::vector<std::pair<double, double>> terms;
  for (const auto& pt : sample.points) terms.emplace_back(pt.y1 + pt.y2, 1.0 / (pt.s1sq + pt.s2sq));
  std::sort(terms.begin(), terms.end());
  for (const auto& [y, w] : terms) {
    num += w * y;
    den += w;
  }
  out.pooled = num / den;
  return out;
}

AsymmetryTest asymmetry_test(const BivariateSample& sample, const StudyTable& table) {
  check_pair(sample, table);
  if (sample.size() < 3) throw Error(ErrorCode::small, "the asymmetry test needs at least three studies");

  std::vector<RegressionRow> rows;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double ess = effective_sample_size(table.studies[i].n_diseased(), table.studies[i].n_healthy());
    rows.push_back({1.0 / std::sqrt(ess), sample.points[i].y1 + sample.points[i].y2, ess});
  }
  std::sort(rows.begin(), rows.end(),
            [](const RegressionRow& a, const RegressionRow& b) { return std::tie(a.x, a.y, a.w) < std::tie(b.x, b.y, b.w); });

  AsymmetryTest out;
  out.df = static_cast<int>(rows.size()) - 2;
  double sw = 0.0;
  double swx = 0.0;
  double swy = 0.0;
  for (const auto& r : rows) {
    sw += r.w;
    swx += r.w * r.x;
    swy += r.w * r.y;
  }
  const double xbar = swx / sw;
  const double ybar = swy / sw;
  double sxx = 0.0;
  double sxy = 0.0;
  double y_lo = rows.front().y;
  double y_hi = rows.front().y;
  for (const auto& r : rows) {
    sxx += r.w * (r.x - xbar) * (r.x - xbar);
    sxy += r.w * (r.x - xbar) * (r.y - ybar);
    y_lo = std::min(y_lo, r.y);
    y_hi = std::max(y_hi, r.y);
  }
  if (!(sxx > 0.0)) {
    throw Error(ErrorCode::degenerate, "all studies have the same effective sample size");
  }
  if (y_hi - y_lo <= 1e-12 * std::max(1.0, std::fabs(ybar))) {
    out.intercept = ybar;
    return out;  // constant lnDOR: no asymmetry at all
  }
  out.slope = sxy / sxx;
  out.intercept = ybar - out.slope * xbar;
  double rss = 0.0;
  for (const auto& r : rows) {
    const double e = r.y - out.intercept - out.slope * r.x;
    rss += r.w * e * e;
  }
  const double sigma2 = rss / out.df;
  out.se_slope = std::sqrt(sigma2 / sxx);
  if (out.se_slope > 0.0) {
    out.t_value = out.slope / out.se_slope;
    out.p_value = students_t_two_sided_p(out.t_value, out.df);
  } else {
    out.t_value = out.slope > 0.0 ? INFINITY : -INFINITY;
    out.p_value = 0.0;
  }
  return out;
}

void to_json(nlohmann::json& j, const FunnelData& f) {
  auto points = nlohmann::json::array();
  for (const auto& d : f.points) {
    points.push_back({{"id", d.id}, {"lnDOR", d.ln_dor}, {"inv_sqrt_ess", d.inv_sqrt_ess}, {"ess", d.ess}});
  }
  j = {{"points", std::move(points)}, {"pooled", f.pooled}};
}

void to_json(nlohmann::json& j, const AsymmetryTest& t) {
  j = {{"slope", t.slope},     {"intercept", t.intercept}, {"se_slope", t.se_slope},
       {"t_value", t.t_value}, {"p_value", t.p_value},     {"df", t.df}};
}

nlohmann::json funnel_report(const BivariateSample& sample, const StudyTable& table) {
  nlohmann::json j = funnel_data(sample, table);
  j["method"] = "effective-sample-size regression of lnDOR on 1/sqrt(ESS), weights ESS";
  j["test"] = nullptr;
  if (sample.size() >= 3) {
    try {
      j["test"] = asymmetry_test(sample, table);
    } catch (const Error& e) {
      j["test_error"] = {{"code", code_name(e.code())}, {"message", e.detail()}};
    }
  }
  return j;
}

}  // namespace dtameta
