#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "dtameta/study_table.hpp"
#include "json.hpp"

namespace dtameta {

struct Interval {
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

/// Per-study accuracy summaries. These describe single studies only and are not pooled
/// meta-analytic estimates.
struct StudyMetrics {
  std::string id;
  Interval se;
  Interval sp;
  Interval ln_dor;
  Interval lr_pos;
  Interval lr_neg;
};

/// Logit-Wald intervals for se/sp, Wald on lnDOR, and log-scale delta intervals for the
/// likelihood ratios, all computed from the corrected counts.
std::vector<StudyMetrics> study_metrics(const BivariateSample& sample,
                                        const CorrectedTable& corrected, double alpha = 0.05);

enum class ScatterShape { interval, region };

using RocPoint = std::array<double, 2>;  // (fpr, se)

struct ScatterDatum {
  std::string id;
  double fpr = 0.0;
  double se = 0.0;
  Interval fpr_ci;                 // interval mode
  Interval se_ci;                  // interval mode
  std::vector<RocPoint> region;    // region mode: closed polyline, first == last
};

std::vector<ScatterDatum> scatter_data(const BivariateSample& sample, ScatterShape shape,
                                       double alpha = 0.05, int n_points = 64);

enum class ForestMetric { se, sp, ln_dor, lr_pos, lr_neg };

struct ForestRow {
  std::string id;
  double est = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

struct ForestSeries {
  ForestMetric metric = ForestMetric::se;
  std::vector<ForestRow> rows;
  // descriptive footer over the per-study estimates
  double min = 0.0;
  double median = 0.0;
  double max = 0.0;
};

ForestSeries forest_series(const std::vector<StudyMetrics>& metrics, ForestMetric which);

std::string_view to_string(ForestMetric metric);
ForestMetric forest_metric_from_string(std::string_view name);
std::string_view to_string(ScatterShape shape);
ScatterShape scatter_shape_from_string(std::string_view name);

void to_json(nlohmann::json& j, const Interval& v);
void to_json(nlohmann::json& j, const StudyMetrics& m);
void to_json(nlohmann::json& j, const ScatterDatum& d);
void to_json(nlohmann::json& j, const ForestSeries& s);

}  // namespace dtameta
