#pragma once

#include <string>
#include <vector>

#include "dtameta/study_table.hpp"
#include "json.hpp"

namespace dtameta {

/// Effective sample size 4 n1 n0 / (n1 + n0).
double effective_sample_size(long long n_diseased, long long n_healthy);

struct FunnelDatum {
  std::string id;
  double ln_dor = 0.0;
  double inv_sqrt_ess = 0.0;
  double ess = 0.0;
};

struct FunnelData {
  std::vector<FunnelDatum> points;  // input order
  double pooled = 0.0;              // inverse-variance weighted lnDOR
};

/// `sample` must be the transformed `table` (same studies, same order).
FunnelData funnel_data(const BivariateSample& sample, const StudyTable& table);

struct AsymmetryTest {
  double slope = 0.0;
  double intercept = 0.0;
  double se_slope = 0.0;
  double t_value = 0.0;
  double p_value = 1.0;
  int df = 0;
};

/// Weighted regression of lnDOR on 1/sqrt(ESS) with weights ESS; the slope is tested with a
/// two-sided t test on M - 2 degrees of freedom. Throws E_SMALL when M < 3.
AsymmetryTest asymmetry_test(const BivariateSample& sample, const StudyTable& table);

void to_json(nlohmann::json& j, const FunnelData& f);
void to_json(nlohmann::json& j, const AsymmetryTest& t);

/// {points, pooled, method, test}; `test` is null when fewer than three studies are given.
nlohmann::json funnel_report(const BivariateSample& sample, const StudyTable& table);

}  // namespace dtameta
